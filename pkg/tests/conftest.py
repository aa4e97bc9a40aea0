import numpy as np
import pytest

from mmapq import (
    KernelEntry,
    MMAPBlock,
    MMAPSpec,
    ModelConfig,
    NumericSettings,
    SemiMarkovEnvironment,
    ServiceResourceModel,
    exponential,
    validate_model,
)


def no_catastrophes(S=1):
    return SemiMarkovEnvironment(S, {}, np.eye(S)[0])


def single_state_env(dist):
    return SemiMarkovEnvironment(1, {(0, 0): KernelEntry(1.0, dist)}, np.array([1.0]))


def poisson_config(lam, service, env=None, horizon=10.0, step=0.01, arrival=(), departure=(), h0=()):
    blk = MMAPBlock(np.array([[-lam]]), {(1,): np.array([[lam]])})
    return ModelConfig(
        MMAPSpec(1, 1, (blk,)),
        env or no_catastrophes(),
        ServiceResourceModel(((service,),), arrival, departure),
        h0,
        NumericSettings(horizon, step),
    )


def poisson_model(lam, service, **kw):
    return validate_model(poisson_config(lam, service, **kw))


# the two-phase MAP used in the operation examples
D0_EX = np.array([[-3.0, 1.0], [0.0, -2.0]])
D1_EX = np.array([[2.0, 0.0], [1.0, 1.0]])


def map_spec(D0=D0_EX, D1=D1_EX):
    return MMAPSpec(len(D0), 1, (MMAPBlock(np.asarray(D0), {(1,): np.asarray(D1)}),))


@pytest.fixture
def mm1():
    return poisson_model(1.0, exponential(1.0))
