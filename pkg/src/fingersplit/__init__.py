"""Finger-splitting precision grasp planner for three-fingered hands."""
