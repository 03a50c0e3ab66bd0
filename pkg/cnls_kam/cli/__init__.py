# Command-line entry points for cnls_kam