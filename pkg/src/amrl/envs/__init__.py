"""Environments and the learner-facing domain wrappers used by the trainer."""
from amrl.envs.domains import DOMAINS, CmotpDomain, Domain, PommermanDomain, make_domain, register_domain

__all__ = ["DOMAINS", "CmotpDomain", "Domain", "PommermanDomain", "make_domain", "register_domain"]
