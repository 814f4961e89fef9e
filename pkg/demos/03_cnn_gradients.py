"""Check the hand-written CNN backward pass against finite differences.

Uses the fixed-duration architecture on a real 257x59 spectrogram, then
trains a tiny network on toy images to show the training loop converging.

    python3 demos/03_cnn_gradients.py
"""

import numpy as np

from wheezebias import dsp
from wheezebias.models.cnn import FD_ARCH, CnnArchitecture, TrainConfig, cnn_grad_check, init_weights, train_cnn

rng = np.random.default_rng(0)
for name, shape in FD_ARCH.activation_shapes():
    print(f"  {name:<10} {shape}")

w = init_weights(FD_ARCH, rng)
w["bn_var"] = rng.uniform(0.5, 2.0, w["bn_var"].shape)
w["fc2_w"] = rng.normal(0, 0.3, w["fc2_w"].shape)
spec = dsp.event_spectrogram(rng.normal(size=2000))
worst, details = cnn_grad_check(FD_ARCH, w, spec, label=1, n_per_layer=30, return_details=True)
for layer, d in details.items():
    print(f"{layer:<10} max rel err {d['max_rel_error']:.2e} over {d['checked']} params "
          f"({d['skipped_kinks']} kink crossings skipped)")
print(f"worst {worst:.2e}")

arch = CnnArchitecture(conv_size=3, conv_filters=4, pool_size=2, fc1_size=6, input_shape=(12, 10))
X = rng.random((200, 12, 10)) * 0.3
y = rng.integers(0, 2, 200)
X[y == 1, 3] += 1.0
X[y == 0, 8] += 1.0
model = train_cnn(X[:150], y[:150], arch, TrainConfig(max_epochs=10, batch_size=16, learning_rate=1e-2))
print(f"\ntoy stripe task: held-out accuracy {np.mean(model.predict(X[150:]) == y[150:]):.2f}")
