"""Reference VET writer used to produce the golden fixtures in this directory."""
import json
import struct


def vet_bytes(shape, values, meta):
    out = b"VET1" + struct.pack("<III", 1, 1, len(shape))
    out += b"".join(struct.pack("<Q", d) for d in shape)
    out += b"".join(struct.pack("<f", v) for v in values)
    text = json.dumps(meta, separators=(",", ":"), sort_keys=True).encode()
    return out + struct.pack("<Q", len(text)) + text


features = vet_bytes(
    [2, 3],
    [0.5, -1.25, 3.0, 0.001, 0.0, -0.0],
    {
        "kind": "features",
        "model_name": "alexnet",
        "layer_name": "layer2",
        "frames_per_video": 16,
        "aggregated": True,
    },
)
with open("features_2x3.vet", "wb") as f:
    f.write(features)

header = vet_bytes([1000, 3, 100], [], {})[: 4 + 12 + 3 * 8]
with open("response_1000x3x100.header", "wb") as f:
    f.write(header)
