"""Domain schemas and ledger models"""
