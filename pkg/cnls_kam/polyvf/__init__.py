# Polynomial vector-field algebra for cnls_kam