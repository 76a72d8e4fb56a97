"""Test suite for the course recommender"""
