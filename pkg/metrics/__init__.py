"""Quality indices and dictionary recovery scores."""
