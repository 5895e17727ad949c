# Planning, mapping and mission core
