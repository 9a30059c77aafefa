"""Stage 2: shift detection and asymmetric online co-distillation."""
