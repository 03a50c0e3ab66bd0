# Run ledger for cnls_kam