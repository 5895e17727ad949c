# Informative planning engine package
