# Parsers and result writers
