"""Mixed-initiative control, scripted operator and closed-loop episodes."""
