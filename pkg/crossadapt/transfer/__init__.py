"""Stage 1: projection, strategic sampling and progressive distillation."""
