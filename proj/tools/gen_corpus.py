#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Generate the 15 architecture descriptors shipped in data/corpus/.

Each network is written at block granularity following the reference
Keras application definitions (1000-class top, preprocessing layers
removed). Branched cells are flattened into a serial kernel timeline;
a layer whose input is not the previous layer's output carries
"branch": true.

Usage: gen_corpus.py OUT_DIR
"""

import json
import math
import os
import sys


def ceil_div(a, b):
    return (a + b - 1) // b


class Net:
    def __init__(self, name, declared, input_shape=(32, 32, 3)):
        self.name = name
        self.declared = declared
        self.input_shape = list(input_shape)
        self.layers = []
        self.shape = list(input_shape)
        self.counter = 0

    def _emit(self, kind, out_shape, branch_from=None, **fields):
        self.counter += 1
        in_shape = list(branch_from) if branch_from is not None else list(self.shape)
        layer = {"name": f"{kind}_{self.counter}", "kind": kind, "in": in_shape}
        layer.update(fields)
        if branch_from is not None:
            layer["branch"] = True
        self.layers.append(layer)
        self.shape = list(out_shape)
        return list(out_shape)

    def src(self, branch_from):
        return list(branch_from) if branch_from is not None else list(self.shape)

    def conv(self, filters, k=3, s=1, bias=False, frm=None):
        h, w, _ = self.src(frm)
        out = [ceil_div(h, s), ceil_div(w, s), filters]
        kind = "pwconv2d" if k == 1 else "conv2d"
        return self._emit(kind, out, frm, out_channels=filters, kernel=[k, k],
                          stride=[s, s], bias=bias)

    def dw(self, k=3, s=1, bias=False, frm=None):
        h, w, c = self.src(frm)
        out = [ceil_div(h, s), ceil_div(w, s), c]
        return self._emit("dwconv2d", out, frm, kernel=[k, k], stride=[s, s], bias=bias)

    def bn(self, frm=None):
        return self._emit("batchnorm", self.src(frm), frm)

    def act(self, kind, frm=None):
        return self._emit(kind, self.src(frm), frm)

    def add(self):
        return self._emit("add", self.shape)

    def concat(self, total_channels):
        h, w, _ = self.shape
        return self._emit("concat", [h, w, total_channels], out_channels=total_channels)

    def pool(self, kind, k, s, frm=None):
        h, w, c = self.src(frm)
        out = [ceil_div(h, s), ceil_div(w, s), c]
        return self._emit(kind, out, frm, kernel=[k, k], stride=[s, s])

    def gpool(self):
        return self._emit("global_pool", [1, 1, self.shape[2]])

    def se(self, reduced):
        return self._emit("se_block", self.shape, out_channels=reduced)

    def dense(self, units, bias=True):
        return self._emit("dense", [1, 1, units], out_channels=units, bias=bias)

    def classifier_top(self, classes=1000):
        self.dense(classes)
        self.act("softmax")

    def to_json(self):
        return {
            "name": self.name,
            "input_shape": self.input_shape,
            "declared_params": self.declared,
            "layers": self.layers,
        }


# ---------------------------------------------------------------- MobileNet


def mobilenet_v1():
    n = Net("MobileNet", 4_300_000)
    n.conv(32, 3, 2)
    n.bn()
    n.act("relu")
    plan = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2)] + \
           [(512, 1)] * 5 + [(1024, 2), (1024, 1)]
    for filters, stride in plan:
        n.dw(3, stride)
        n.bn()
        n.act("relu")
        n.conv(filters, 1)
        n.bn()
        n.act("relu")
    n.gpool()
    n.classifier_top()
    return n


def mobilenet_v2():
    n = Net("MobileNetV2", 3_500_000)
    n.conv(32, 3, 2)
    n.bn()
    n.act("relu")
    cfg = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
           (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    for t, c, reps, s in cfg:
        for i in range(reps):
            stride = s if i == 0 else 1
            cin = n.shape[2]
            if t != 1:
                n.conv(cin * t, 1)
                n.bn()
                n.act("relu")
            n.dw(3, stride)
            n.bn()
            n.act("relu")
            n.conv(c, 1)
            n.bn()
            if stride == 1 and cin == c:
                n.add()
    n.conv(1280, 1)
    n.bn()
    n.act("relu")
    n.gpool()
    n.classifier_top()
    return n


def make_divisible(v, divisor=8, min_value=None):
    if min_value is None:
        min_value = divisor
    new_v = max(min_value, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


def mobilenet_v3(large):
    name = "MobileNetV3large" if large else "MobileNetV3small"
    n = Net(name, 5_400_000 if large else 2_500_000)
    n.conv(16, 3, 2)
    n.bn()
    n.act("swish")
    se = 0.25
    if large:
        blocks = [
            (1, 16, 3, 1, None, "relu"), (4, 24, 3, 2, None, "relu"),
            (3, 24, 3, 1, None, "relu"), (3, 40, 5, 2, se, "relu"),
            (3, 40, 5, 1, se, "relu"), (3, 40, 5, 1, se, "relu"),
            (6, 80, 3, 2, None, "swish"), (2.5, 80, 3, 1, None, "swish"),
            (2.3, 80, 3, 1, None, "swish"), (2.3, 80, 3, 1, None, "swish"),
            (6, 112, 3, 1, se, "swish"), (6, 112, 3, 1, se, "swish"),
            (6, 160, 5, 2, se, "swish"), (6, 160, 5, 1, se, "swish"),
            (6, 160, 5, 1, se, "swish"),
        ]
        last_point = 1280
    else:
        blocks = [
            (1, 16, 3, 2, se, "relu"), (72 / 16, 24, 3, 2, None, "relu"),
            (88 / 24, 24, 3, 1, None, "relu"), (4, 40, 5, 2, se, "swish"),
            (6, 40, 5, 1, se, "swish"), (6, 40, 5, 1, se, "swish"),
            (3, 48, 5, 1, se, "swish"), (3, 48, 5, 1, se, "swish"),
            (6, 96, 5, 2, se, "swish"), (6, 96, 5, 1, se, "swish"),
            (6, 96, 5, 1, se, "swish"),
        ]
        last_point = 1024
    for block_id, (expansion, filters, k, s, se_ratio, act) in enumerate(blocks):
        cin = n.shape[2]
        filters = make_divisible(filters)
        expanded = make_divisible(cin * expansion)
        if block_id:
            n.conv(expanded, 1)
            n.bn()
            n.act(act)
        n.dw(k, s)
        n.bn()
        n.act(act)
        if se_ratio:
            n.se(make_divisible(expanded * se_ratio))
        n.conv(filters, 1)
        n.bn()
        if s == 1 and cin == filters:
            n.add()
    n.conv(make_divisible(n.shape[2] * 6), 1)
    n.bn()
    n.act("swish")
    n.gpool()
    n.dense(last_point)
    n.act("swish")
    n.classifier_top()
    return n


# ------------------------------------------------------------- EfficientNet

EFFNET_BLOCKS = [
    # kernel, repeats, filters_in, filters_out, expand, stride
    (3, 1, 32, 16, 1, 1),
    (3, 2, 16, 24, 6, 2),
    (5, 2, 24, 40, 6, 2),
    (3, 3, 40, 80, 6, 2),
    (5, 3, 80, 112, 6, 1),
    (5, 4, 112, 192, 6, 2),
    (3, 1, 192, 320, 6, 1),
]

EFFNET_SCALING = {
    # width, depth, declared params
    0: (1.0, 1.0, 5_300_000),
    1: (1.0, 1.1, 7_900_000),
    2: (1.1, 1.2, 9_200_000),
    3: (1.2, 1.4, 12_300_000),
    4: (1.4, 1.8, 19_500_000),
    5: (1.6, 2.2, 30_600_000),
    6: (1.8, 2.6, 43_300_000),
}


def efficientnet(variant):
    width, depth, declared = EFFNET_SCALING[variant]

    def round_filters(f):
        return make_divisible(f * width)

    def round_repeats(r):
        return int(math.ceil(depth * r))

    n = Net(f"EfficientNetB{variant}", declared)
    n.conv(round_filters(32), 3, 2)
    n.bn()
    n.act("swish")
    for k, reps, fin, fout, expand, stride in EFFNET_BLOCKS:
        fin = round_filters(fin)
        fout = round_filters(fout)
        for j in range(round_repeats(reps)):
            s = stride if j == 0 else 1
            if j > 0:
                fin = fout
            expanded = fin * expand
            if expand != 1:
                n.conv(expanded, 1)
                n.bn()
                n.act("swish")
            n.dw(k, s)
            n.bn()
            n.act("swish")
            n.se(max(1, int(fin * 0.25)))
            n.conv(fout, 1)
            n.bn()
            if s == 1 and fin == fout:
                n.add()
    n.conv(round_filters(1280), 1)
    n.bn()
    n.act("swish")
    n.gpool()
    n.classifier_top()
    return n


# ----------------------------------------------------------------- DenseNet


def densenet(depth_name, blocks, declared):
    n = Net(f"DenseNet{depth_name}", declared)
    n.conv(64, 7, 2)
    n.bn()
    n.act("relu")
    n.pool("maxpool", 3, 2)
    growth = 32
    for bi, count in enumerate(blocks):
        for _ in range(count):
            c = n.shape[2]
            n.bn()
            n.act("relu")
            n.conv(4 * growth, 1)
            n.bn()
            n.act("relu")
            n.conv(growth, 3)
            n.concat(c + growth)
        if bi != len(blocks) - 1:
            n.bn()
            n.act("relu")
            n.conv(int(n.shape[2] * 0.5), 1)
            n.pool("avgpool", 2, 2)
    n.bn()
    n.act("relu")
    n.gpool()
    n.classifier_top()
    return n


# ------------------------------------------------------------- NASNetMobile


class NasBuilder:
    """Flattens NASNet-A cells; tensors are tracked by their shapes."""

    def __init__(self, net):
        self.n = net

    def sep_block(self, src, filters, k, s=1):
        n = self.n
        n.act("relu", frm=src)
        n.dw(k, s)
        n.conv(filters, 1)
        n.bn()
        n.act("relu")
        n.dw(k, 1)
        n.conv(filters, 1)
        n.bn()
        return list(n.shape)

    def adjust(self, p, ip, filters):
        n = self.n
        if p is None:
            return ip
        if p[0] != ip[0]:
            n.act("relu", frm=p)
            relu_out = list(n.shape)
            n.pool("avgpool", 1, 2)
            n.conv(filters // 2, 1)
            n.pool("avgpool", 1, 2, frm=relu_out)
            n.conv(filters // 2, 1)
            n.concat(2 * (filters // 2))
            return n.bn()
        if p[2] != filters:
            n.act("relu", frm=p)
            n.conv(filters, 1)
            return n.bn()
        return p

    def squeeze(self, ip, filters):
        n = self.n
        n.act("relu", frm=ip)
        n.conv(filters, 1)
        return n.bn()

    def normal_cell(self, ip, p, filters):
        n = self.n
        p = self.adjust(p, ip, filters)
        h = self.squeeze(ip, filters)
        self.sep_block(h, filters, 5)
        self.sep_block(p, filters, 3)
        n.add()
        self.sep_block(p, filters, 5)
        self.sep_block(p, filters, 3)
        n.add()
        n.pool("avgpool", 3, 1, frm=h)
        n.add()
        n.pool("avgpool", 3, 1, frm=p)
        n.pool("avgpool", 3, 1, frm=p)
        n.add()
        self.sep_block(h, filters, 3)
        n.add()
        return n.concat(6 * filters), ip

    def reduction_cell(self, ip, p, filters):
        n = self.n
        p = self.adjust(p, ip, filters)
        h = self.squeeze(ip, filters)
        self.sep_block(h, filters, 5, 2)
        self.sep_block(p, filters, 7, 2)
        x1 = n.add()
        n.pool("maxpool", 3, 2, frm=h)
        self.sep_block(p, filters, 7, 2)
        n.add()
        n.pool("avgpool", 3, 2, frm=h)
        self.sep_block(p, filters, 5, 2)
        n.add()
        n.pool("avgpool", 3, 1, frm=x1)
        n.add()
        self.sep_block(x1, filters, 3)
        n.pool("maxpool", 3, 2, frm=h)
        n.add()
        return n.concat(4 * filters), ip


def nasnet_mobile():
    n = Net("NASNetMobile", 5_300_000)
    b = NasBuilder(n)
    filters = 1056 // 24
    mult = 2
    blocks = 4
    n.conv(32, 3, 2)
    x = n.bn()
    p = None
    x, p = b.reduction_cell(x, p, filters // mult ** 2)
    x, p = b.reduction_cell(x, p, filters // mult)
    for _ in range(blocks):
        x, p = b.normal_cell(x, p, filters)
    x, p = b.reduction_cell(x, p, filters * mult)
    for _ in range(blocks):
        x, p = b.normal_cell(x, p, filters * mult)
    x, p = b.reduction_cell(x, p, filters * mult ** 2)
    for _ in range(blocks):
        x, p = b.normal_cell(x, p, filters * mult ** 2)
    n.act("relu", frm=x)
    n.gpool()
    n.classifier_top()
    return n


def corpus():
    nets = [mobilenet_v1(), mobilenet_v2(), mobilenet_v3(False), mobilenet_v3(True)]
    nets += [efficientnet(v) for v in range(7)]
    nets += [densenet("121", [6, 12, 24, 16], 8_100_000),
             densenet("169", [6, 12, 32, 32], 14_300_000),
             densenet("201", [6, 12, 48, 32], 20_200_000)]
    nets.append(nasnet_mobile())
    return nets


def write(net, path):
    doc = net.to_json()
    lines = ["{",
             f'  "name": {json.dumps(doc["name"])},',
             f'  "input_shape": {json.dumps(doc["input_shape"])},',
             f'  "declared_params": {doc["declared_params"]},',
             '  "layers": [']
    body = [f"    {json.dumps(layer, separators=(', ', ': '))}" for layer in doc["layers"]]
    lines.append(",\n".join(body))
    lines += ["  ]", "}"]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def main():
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 1
    out_dir = sys.argv[1]
    os.makedirs(out_dir, exist_ok=True)
    for i, net in enumerate(corpus()):
        write(net, os.path.join(out_dir, f"{i:02d}_{net.name.lower()}.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
