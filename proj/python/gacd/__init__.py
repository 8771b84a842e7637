"""Graph-based autonomous cyber defence: simulator, graph transport tools and agents."""

import json

from . import _gacd
from ._gacd import code_version, evaluate, fit_sdot

__all__ = [
    "Agent",
    "Environment",
    "code_version",
    "evaluate",
    "fgw_distance",
    "fit_sdot",
    "generate_scenario",
    "permute_graph",
    "reference_scenario",
    "train",
    "validate_scenario",
]


def reference_scenario():
    return json.loads(_gacd.reference_scenario())


def generate_scenario(spec, seed):
    return json.loads(_gacd.generate_scenario(json.dumps(spec), seed))


def validate_scenario(scenario):
    return _gacd.validate_scenario(json.dumps(scenario))


def permute_graph(graph, sigma):
    return json.loads(_gacd.permute_graph(json.dumps(graph), list(sigma)))


def fgw_distance(graph_a, graph_b, alpha=0.5):
    return _gacd.fgw_distance(json.dumps(graph_a), json.dumps(graph_b), alpha)


def train(config):
    return _gacd.train(json.dumps(config))


class Environment:
    """Simulator wrapper exchanging observation graphs as dicts."""

    def __init__(self, scenario=None, red="bline", p_green=0.25, red_enabled=True, max_steps=100):
        text = json.dumps(scenario) if scenario is not None else ""
        self._env = _gacd.Environment(text, red, p_green, red_enabled, max_steps)

    def reset(self, seed=0):
        return json.loads(self._env.reset(seed))

    def step(self, kind, target=-1):
        out = self._env.step(kind, target)
        out["graph"] = json.loads(out["graph"])
        return out

    def switch_scenario(self, scenario):
        return json.loads(self._env.switch_scenario(json.dumps(scenario)))

    def valid_action(self, kind, target=-1):
        return self._env.valid_action(kind, target)

    @property
    def num_hosts(self):
        return self._env.num_hosts

    @property
    def done(self):
        return self._env.done

    @property
    def step_index(self):
        return self._env.step_index


class Agent:
    """Graph policy; decisions are greedy."""

    def __init__(self, config=None, _core=None):
        self._agent = _core if _core is not None else _gacd.Agent(json.dumps(config or {}))

    @classmethod
    def load(cls, path):
        return cls(_core=_gacd.Agent.load(path))

    def save(self, path):
        self._agent.save(path)

    def act(self, graph):
        """Returns (kind, target host index, log-probability, value)."""
        return self._agent.act(json.dumps(graph))

    def node_distribution(self, graph):
        return self._agent.node_distribution(json.dumps(graph))

    @property
    def config(self):
        return json.loads(self._agent.config)
