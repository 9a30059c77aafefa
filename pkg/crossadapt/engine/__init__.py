"""Mode runners, run folders and command orchestration."""
