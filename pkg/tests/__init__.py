"""
Test suite for Amazon Seller Assistant.
"""
