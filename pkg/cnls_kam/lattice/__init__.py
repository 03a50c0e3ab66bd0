# Resonant lattice classification for cnls_kam