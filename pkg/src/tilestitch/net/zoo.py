"""NETSPEC generators for the architectures used in experiments and tests.

Convs are bias-free unless asked otherwise: with weights drawn from
[-0.1, 0.1] the signal shrinks layer by layer while biases do not, and
biased random nets end up predicting one label everywhere.
"""

from __future__ import annotations

import random


def unet_spec(levels: int = 2, width: int = 4, in_channels: int = 1, classes: int = 2,
              padded: bool = False, bias: bool = False) -> str:
    """U-Net style encoder/decoder: two 3x3 convs per level, 2x2 max-pooling,
    nearest upsampling and crop-concat skips.  ``padded`` gives "same" convs."""
    p = 1 if padded else 0
    b = int(bias)
    lines = [f"input in channels={in_channels}"]
    src, skips = "in", []
    for lvl in range(levels):
        ch = width * 2**lvl
        lines += [
            f"conv e{lvl}a from={src} k=3 p={p} cout={ch} bias={b}",
            f"relu e{lvl}ar from=e{lvl}a",
            f"conv e{lvl}b from=e{lvl}ar k=3 p={p} cout={ch} bias={b}",
            f"relu e{lvl}br from=e{lvl}b",
            f"maxpool pool{lvl} from=e{lvl}br k=2 s=2",
        ]
        skips.append(f"e{lvl}br")
        src = f"pool{lvl}"
    ch = width * 2**levels
    lines += [
        f"conv mida from={src} k=3 p={p} cout={ch} bias={b}",
        "relu midar from=mida",
        f"conv midb from=midar k=3 p={p} cout={ch} bias={b}",
        "relu midbr from=midb",
    ]
    src = "midbr"
    for lvl in reversed(range(levels)):
        ch = width * 2**lvl
        lines += [
            f"upsample up{lvl} from={src} f=2",
            f"cropconcat cat{lvl} from={skips[lvl]},up{lvl}",
            f"conv d{lvl}a from=cat{lvl} k=3 p={p} cout={ch} bias={b}",
            f"relu d{lvl}ar from=d{lvl}a",
            f"conv d{lvl}b from=d{lvl}ar k=3 p={p} cout={ch} bias={b}",
            f"relu d{lvl}br from=d{lvl}b",
        ]
        src = f"d{lvl}br"
    lines += [f"conv score from={src} k=1 cout={classes} bias={b}", "output out from=score"]
    return "\n".join(lines) + "\n"


def pool_stack_spec(strides: list[int], channels: int = 1) -> str:
    """Input followed by max-pools only."""
    lines = [f"input in channels={channels}"]
    src = "in"
    for i, s in enumerate(strides):
        lines.append(f"maxpool pool{i} from={src} k={s} s={s}")
        src = f"pool{i}"
    lines.append(f"output out from={src}")
    return "\n".join(lines) + "\n"


def conv_stack_spec(n_convs: int, k: int = 3, p: int = 1, width: int = 4, in_channels: int = 1,
                    classes: int = 2, bias: bool = False) -> str:
    """Plain chain of ``n_convs`` kxk convs with ReLU between, then a 1x1 scorer."""
    lines = [f"input in channels={in_channels}"]
    src, b = "in", int(bias)
    for i in range(n_convs):
        lines += [f"conv c{i} from={src} k={k} p={p} cout={width} bias={b}", f"relu r{i} from=c{i}"]
        src = f"r{i}"
    lines += [f"conv score from={src} k=1 cout={classes} bias={b}", "output out from=score"]
    return "\n".join(lines) + "\n"


def padded_pool_spec(levels: int = 1, width: int = 4, in_channels: int = 1, classes: int = 2) -> str:
    """"Same"-size net without skips: ``levels`` conv+pool stages, a bottom
    conv, then upsampling back to input resolution (period 2**levels)."""
    lines = [f"input in channels={in_channels}"]
    src = "in"
    for i in range(levels):
        lines += [f"conv c{i} from={src} k=3 p=1 cout={width} bias=0", f"relu r{i} from=c{i}",
                  f"maxpool pool{i} from=r{i} k=2 s=2"]
        src = f"pool{i}"
    lines += [f"conv c{levels} from={src} k=3 p=1 cout={width} bias=0", f"relu r{levels} from=c{levels}"]
    src = f"r{levels}"
    for i in reversed(range(levels)):
        lines.append(f"upsample up{i} from={src} f=2")
        src = f"up{i}"
    lines += [f"conv score from={src} k=1 cout={classes} bias=0", "output out from=score"]
    return "\n".join(lines) + "\n"


def random_padded_spec(rng: random.Random, classes: int = 2) -> str:
    """Random conv chain with at least one zero-padded conv, optional
    dilation, an optional pool/upsample pair and an optional crop-concat skip."""
    lines = ["input in channels=1"]
    src, idx, padded = "in", 0, False
    with_pool = rng.random() < 0.5
    with_skip = with_pool and rng.random() < 0.5
    n_pre = rng.randint(1, 3)
    n_post = rng.randint(0, 2)

    def conv(src: str, force_pad: bool = False) -> str:
        nonlocal idx, padded
        k = rng.choice([1, 3, 3, 5])
        d = rng.choice([1, 1, 2]) if k > 1 else 1
        half = d * (k - 1) // 2
        p = half if (force_pad or rng.random() < 0.7) else rng.randint(0, half)
        if k == 1 and force_pad:
            k, d, p = 3, 1, 1
        padded |= p > 0
        name = f"c{idx}"
        idx += 1
        lines.append(f"conv {name} from={src} k={k} p={p} d={d} cout={rng.randint(2, 4)} bias=0")
        lines.append(f"relu {name}r from={name}")
        return f"{name}r"

    for i in range(n_pre):
        src = conv(src, force_pad=(i == 0))
    if with_pool:
        skip = src
        lines.append(f"maxpool pool from={src} k=2 s=2")
        src = conv("pool")
        lines.append(f"upsample up from={src} f=2")
        src = "up"
        if with_skip:
            lines.append(f"cropconcat cat from={skip},up")
            src = "cat"
    for _ in range(n_post):
        src = conv(src)
    lines += [f"conv score from={src} k=1 cout={classes} bias=0", "output out from=score"]
    assert padded
    return "\n".join(lines) + "\n"


BUILTINS = {
    "unet4": lambda: unet_spec(levels=4, width=4),
    "unet2": lambda: unet_spec(levels=2, width=4),
    "unet2-padded": lambda: unet_spec(levels=2, width=4, padded=True),
    "pool-padded": padded_pool_spec,
    "pool4-padded": lambda: padded_pool_spec(levels=2),
    "twoconv": lambda: conv_stack_spec(2, k=3, p=1, width=1, classes=1),
    "pool16": lambda: pool_stack_spec([2, 2, 2, 2]),
    "pool8": lambda: pool_stack_spec([2, 2, 2]),
    "maxpool2": lambda: pool_stack_spec([2]),
    "identity": lambda: "input in channels=1\noutput out from=in\n",
}
