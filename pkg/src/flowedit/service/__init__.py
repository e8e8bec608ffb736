"""Learner/actor split: wire protocol, servers, session orchestration."""
