"""Verifiable batched CNN layers: QMP and QAP zk-SNARKs, commitments, links and aggregation."""
