"""Where the random events come from, and why their durations matter.

Builds one synthetic recording, generates its non-wheeze events in both
modes, and shows how much of the fixed 2 s analysis window ends up as zero
padding for each event.

    python3 demos/01_events_and_durations.py
"""

import numpy as np

from wheezebias import dsp
from wheezebias.eventgen import FD, VD, GenerationConfig, burr_inverse_cdf, burr_mode, generate_events
from wheezebias.synth import SynthConfig, make_corpus

print(f"Burr wheeze-duration law: mode {burr_mode():.4f} s, median {burr_inverse_cdf(0.5):.4f} s")

rec, wheezes, split = make_corpus(SynthConfig(n_recordings=2, seed=7))[0]
print(f"\nrecording {rec.id} ({rec.duration:.0f} s, {split} split) has {len(wheezes)} annotated wheezes:")
for w in wheezes:
    print(f"  wheeze  {w.start:7.3f} - {w.end:7.3f}  ({w.duration * 1000:5.0f} ms)"
          f"  padding {dsp.padding_fraction(round(w.duration * rec.sample_rate)):.2f}")

for mode in (FD, VD):
    events = generate_events(rec.id, rec.duration, wheezes, GenerationConfig(mode=mode, base_seed=0))
    print(f"\n{mode} mode generated {len(events)} random events:")
    for e in events:
        pad = dsp.padding_fraction(round(e.duration * rec.sample_rate))
        print(f"  random  {e.start:7.3f} - {e.end:7.3f}  ({e.duration * 1000:5.0f} ms)  padding {pad:.2f}")

print("\nIn FD mode every random event is 150 ms, so roughly 92% of its window is")
print("zeros; wheezes are longer and padded less. A classifier can separate the")
print("classes from the padding alone. VD mode removes that shortcut.")

seg = dsp.prepare_segment(np.ones(600))
spec = dsp.stft_magnitude(seg)
silent = int(np.sum(spec.sum(axis=0) == 0))
print(f"\nA 150 ms event gives a {spec.shape[0]}x{spec.shape[1]} spectrogram with {silent} silent frames.")
