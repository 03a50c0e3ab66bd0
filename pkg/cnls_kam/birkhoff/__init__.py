# Partial Birkhoff normal form for cnls_kam