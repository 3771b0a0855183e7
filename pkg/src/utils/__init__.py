# Marks this directory as a Python package
