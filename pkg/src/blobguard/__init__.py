"""Blob storage server gated by an extended RBAC engine with role cardinality
caps, membership tiers and per-user transaction quotas."""

__version__ = "0.1.0"
