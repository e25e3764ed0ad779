"""Age of Incorrect Information over a random-delay channel."""
