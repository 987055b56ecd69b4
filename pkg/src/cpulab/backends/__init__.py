"""Backend adapters: command templates, the JSONL session protocol, and the
deterministic mock server used for CI-grade end-to-end runs."""
