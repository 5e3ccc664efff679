#!/usr/bin/env python3
# Copyright 2026 The Temporal Rebalance Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes the golden .atrc fixtures with nothing but the standard library.

This writer shares no code with the C++ implementation. The C++ tests read
these files, compare the decoded values against the sidecar JSON, and check
that re-serializing reproduces the same bytes.

    python3 tests/fixtures/make_golden_trace.py tests/fixtures/golden
"""

import json
import os
import struct
import sys
import zlib

MASKED = -3.4e38


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def spans(pairs):
    return [[b, e] for b, e in pairs]


def write_trace(path, *, num_layers, heads, layer_ids, frame_spans, text_spans,
                stage, score_queries, target_query, model_tag, source_dtype,
                value):
    total_len = max(e for _, e in frame_spans + text_spans)
    step = stage.get("step", -1)
    keys = total_len if stage["kind"] == "prefill" else total_len + step + 1
    rows = sorted(set(score_queries) | {target_query})

    values = []
    body = bytearray()
    for layer in layer_ids:
        for h in range(heads):
            for q in rows:
                for j in range(keys):
                    z = MASKED if j > q else value(layer, h, q, j)
                    body += struct.pack("<f", z)
                    values.append(None if j > q else f32(z))

    header = {
        "body_bytes": len(body),
        "body_crc32": zlib.crc32(bytes(body)) & 0xFFFFFFFF,
        "body_dtype": "f32le",
        "format_version": 1,
        "heads": heads,
        "keys": keys,
        "layer_ids": layer_ids,
        "layout": {
            "excluded_queries": [],
            "frame_spans": spans(frame_spans),
            "text_spans": spans(text_spans),
            "total_len": total_len,
        },
        "model_tag": model_tag,
        "num_layers": num_layers,
        "plan": {"score_queries": score_queries, "target_query": target_query},
        "recorded_queries": rows,
        "source_dtype": source_dtype,
        "stage": stage,
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as out:
        out.write(b"ATRC")
        out.write(struct.pack("<I", 1))
        out.write(struct.pack("<I", len(text)))
        out.write(text)
        out.write(body)

    expected = {"keys": keys, "rows": rows, "layer_ids": layer_ids,
                "heads": heads, "values": values}
    with open(path.replace(".atrc", ".expected.json"), "w") as out:
        json.dump(expected, out, separators=(",", ":"))
        out.write("\n")


def anchor_dominant(frames, tokens, text_after):
    # Anchor frame at -5, the rest spread from -7 down to -10; text at 0.
    frame_logits = [-5.0] + [-7.0 - 0.5 * k for k in range(frames - 1)]
    visual = frames * tokens

    def value(layer, h, q, j):
        if j < visual:
            return frame_logits[j // tokens]
        return 0.0

    return value


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    frames, tokens, text_after = 8, 4, 4
    visual = frames * tokens
    write_trace(
        os.path.join(out_dir, "anchor_prefill.atrc"),
        num_layers=4, heads=2, layer_ids=[0, 1, 2, 3],
        frame_spans=[(i * tokens, (i + 1) * tokens) for i in range(frames)],
        text_spans=[(visual, visual + text_after)],
        stage={"kind": "prefill"},
        score_queries=list(range(visual, visual + text_after)),
        target_query=visual + text_after - 1,
        model_tag="golden-anchor", source_dtype="bf16",
        value=anchor_dominant(frames, tokens, text_after))

    # Decode step 2 over 3 frames of 2 tokens with text on both sides.
    def mixed(layer, h, q, j):
        return ((layer * 7 + h * 5 + q * 3 + j * 11) % 23) / 4.0 - 3.0

    write_trace(
        os.path.join(out_dir, "mixed_decode.atrc"),
        num_layers=6, heads=3, layer_ids=[1, 4],
        frame_spans=[(2, 4), (4, 6), (6, 8)],
        text_spans=[(0, 2), (8, 10)],
        stage={"kind": "decode", "step": 2},
        score_queries=[12], target_query=12,
        model_tag="golden-mixed", source_dtype="f16",
        value=mixed)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else
         os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden"))
