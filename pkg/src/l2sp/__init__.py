"""Long-to-short shortest-path graph representation learning and keyword search."""
