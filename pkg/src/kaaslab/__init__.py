"""Learned QoS policies served to concurrent transcoding clients.

Modules: ``mdp_core`` (states, knobs, actions), ``rewards``, ``env_sim``
(synthetic encoder), ``transitions`` (recorded transition table),
``learning`` (Q-Learning and the value-iteration oracle), ``kaas``
(knowledge base), ``scheduler`` (tiered admission) and ``harness``/``cli``.
"""

__version__ = "0.1.0"
