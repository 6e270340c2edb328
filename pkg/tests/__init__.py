# Test package for commscape
