"""forumlens: communities of attack-pattern interest and actor expertise from forum CVE chatter.

The pipeline ingests forum posts mentioning CVE identifiers, resolves each CVE
to CAPEC attack patterns through CWE identifiers, builds an unweighted
actor-CAPEC bimodal network, detects communities of interest with the Leiden
algorithm, derives per-actor skill / commitment / activity features, and
clusters actors into the Professional / Pro-Amateur / Average Career Criminal /
Amateur expertise quadrants.
"""

__version__ = "0.1.0"
