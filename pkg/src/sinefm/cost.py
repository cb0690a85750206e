"""Analytic parameter and FLOP accounting.

One FLOP is one multiply-add. Transform evaluation and map normalization
are priced per generated element with the constants in :data:`COST_TABLE`;
pooling, upsampling, residual adds and activations are free.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Tuple

from .network import (ConvSpec, DenseSpec, ProjSpec, SegHeadSpec, SineFMSpec, walk)


@dataclass(frozen=True)
class CostTable:
    version: int = 1
    conv_mac: int = 1
    transform: int = 1
    normalize: int = 4
    relu: int = 0

    def describe(self):
        return (f"cost-table v{self.version}: conv multiply-add={self.conv_mac}, "
                f"transform={self.transform}/elem, normalize={self.normalize}/elem, relu={self.relu}")


COST_TABLE = CostTable()


def conv_flops(c_in, kernel, h_out, w_out, c_out):
    return c_in * kernel * kernel * h_out * w_out * c_out


def sinefm_flops(config, h_out, w_out, table=COST_TABLE):
    plan = config.plan
    hw = h_out * w_out
    seed = conv_flops(config.c_in, config.kernel, h_out, w_out, config.c_s) * table.conv_mac
    if plan.degenerate:
        return seed
    generated = plan.combine_in * hw
    return (seed + generated * table.transform + generated * table.normalize
            + conv_flops(plan.combine_in, 1, h_out, w_out, plan.combine_out) * table.conv_mac)


@dataclass(frozen=True)
class CostRow:
    layer: str
    params: int
    flops: int


@dataclass
class CostReport:
    rows: List[CostRow]
    input_hw: Tuple[int, int]
    table: CostTable = field(default=COST_TABLE)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self):
        return sum(r.flops for r in self.rows)

    def to_csv(self, comment=True):
        buf = io.StringIO()
        if comment:
            buf.write(f"# {self.table.describe()}; input {self.input_hw[0]}x{self.input_hw[1]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "params", "flops"])
        for r in self.rows:
            w.writerow([r.layer, r.params, r.flops])
        w.writerow(["total", self.total_params, self.total_flops])
        return buf.getvalue()

    def to_text(self):
        width = max([len(r.layer) for r in self.rows] + [5])
        lines = [f"# {self.table.describe()}; input {self.input_hw[0]}x{self.input_hw[1]}",
                 f"{'layer':<{width}}  {'params':>12}  {'flops':>16}"]
        for r in self.rows:
            lines.append(f"{r.layer:<{width}}  {r.params:>12,}  {r.flops:>16,}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12,}  {self.total_flops:>16,}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {"cost_table": asdict(self.table), "input_hw": list(self.input_hw),
                "rows": [asdict(r) for r in self.rows],
                "total": {"params": self.total_params, "flops": self.total_flops}}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _label(row):
    spec = row.spec
    kind = spec.to_line().split()[0]
    return f"{row.index}:{kind}"


def model_cost(descriptor, input_hw=None, table=COST_TABLE, include_free=False):
    """Per-layer costs with spatial sizes propagated through the descriptor.

    Only layers that carry parameters or FLOPs are listed unless
    ``include_free`` is set.
    """
    if input_hw is None:
        input_hw = descriptor.input_shape[1:]
    rows = []
    for r in walk(descriptor, tuple(input_hw)):
        spec = r.spec
        if isinstance(spec, ConvSpec):
            _, ho, wo = r.out_shape
            params = spec.c_in * spec.c_out * spec.kernel ** 2
            flops = conv_flops(spec.c_in, spec.kernel, ho, wo, spec.c_out) * table.conv_mac
        elif isinstance(spec, SineFMSpec):
            _, ho, wo = r.out_shape
            params = spec.config.param_count()
            flops = sinefm_flops(spec.config, ho, wo, table)
        elif isinstance(spec, ProjSpec):
            ho = (r.side_in[1] - 1) // spec.stride + 1
            wo = (r.side_in[2] - 1) // spec.stride + 1
            params = spec.c_in * spec.c_out
            flops = conv_flops(spec.c_in, 1, ho, wo, spec.c_out) * table.conv_mac
        elif isinstance(spec, DenseSpec):
            params = spec.c_in * spec.classes + spec.classes
            flops = spec.c_in * spec.classes * table.conv_mac
        elif isinstance(spec, SegHeadSpec):
            _, ho, wo = r.out_shape
            params = spec.c_in * spec.classes + spec.classes
            flops = conv_flops(spec.c_in, 1, ho, wo, spec.classes) * table.conv_mac
        else:
            if include_free:
                rows.append(CostRow(_label(r), 0, 0))
            continue
        rows.append(CostRow(_label(r), params, flops))
    return CostReport(rows, tuple(int(v) for v in input_hw), table)


def compare(a, b):
    """Totals ratio ``b / a`` as ``(params, flops)``."""
    if tuple(a.input_hw) != tuple(b.input_hw):
        raise ValueError(f"reports use different input sizes: {a.input_hw} vs {b.input_hw}")
    return b.total_params / a.total_params, b.total_flops / a.total_flops
