"""Multi-arm manipulation episode generator with compositional constraint checking."""
