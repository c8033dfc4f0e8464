"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed on
``(seed, purpose, *counters)``. Streams do not depend on call order, so a
training run resumed at step ``s`` sees exactly the draws it would have
seen without interruption.
"""

import numpy as np

T_PARAMS = 1
QUADRATURE = 2
OBSERVATION = 3
INIT = 4
EVALUATION = 5


def stream(seed, purpose, *counters):
    key = [int(seed), int(purpose), *(int(c) for c in counters)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
