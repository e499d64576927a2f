"""Model partitioning, placement, collective compilation and scheduling."""
