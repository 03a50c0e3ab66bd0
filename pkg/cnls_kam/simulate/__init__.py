# Pseudospectral simulation for cnls_kam