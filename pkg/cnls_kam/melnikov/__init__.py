# Melnikov and measure checks for cnls_kam