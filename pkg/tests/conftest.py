import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from absl import flags  # noqa: E402

# Tests read hyperparameter defaults without going through app.run
flags.FLAGS.mark_as_parsed()

import tensorflow as tf  # noqa: E402

tf.config.experimental.enable_op_determinism()
