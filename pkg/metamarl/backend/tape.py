"""
Tape - Scalar reverse-mode differentiation with graph-building gradients

Every differentiable quantity of a rollout chain lives on one growable tape.
Nodes are immutable once appended and always reference lower ids, so a single
descending sweep over ids is a valid reverse topological order.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import TapeDomainError, TapeError

OPS = (
    "const",
    "param",
    "add",
    "mul",
    "neg",
    "exp",
    "log",
    "pow",
    "div",
    "sum",
    "stop_gradient",
    "magic_box",
)

# ops whose output never carries gradient
_BLOCKING = ("const", "stop_gradient")


@dataclass(frozen=True)
class TapeNode:
    """Read-only view of one tape entry"""

    id: int
    op: str
    parents: Tuple[int, ...]
    value: float


class Var:
    """Handle to a tape node with arithmetic overloads"""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> float:
        return self.tape._values[self.id]

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Var(id={self.id}, op={self.tape._ops[self.id]}, value={self.value!r})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.sum([self], bias=float(other))
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.sum([self], bias=-float(other))
        return self.tape.sum([self, other], [1.0, -1.0])

    def __rsub__(self, other):
        return self.tape.sum([self], [-1.0], bias=float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.sum([self], [float(other)])
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                raise TapeDomainError("division by zero")
            return self.tape.sum([self], [1.0 / float(other)])
        return self.tape.div(self, other)

    def __rtruediv__(self, other):
        return self.tape.div(self.tape.const(float(other)), self)

    def __neg__(self):
        return self.tape.neg(self)

    def __pow__(self, exponent):
        return self.tape.pow(self, exponent)


NodeRef = Union[Var, int]


@dataclass(frozen=True)
class GradRequest:
    """Which output to differentiate, against which params, and whether to record the backward pass"""

    output: NodeRef
    wrt: Sequence[NodeRef]
    create_graph: bool = False


class Tape:
    """Append-only scalar computation graph"""

    def __init__(self):
        self._ops: List[str] = []
        self._parents: List[Tuple[int, ...]] = []
        self._values: List[float] = []
        self._meta: List[object] = []
        self._live: List[bool] = []

    def __len__(self) -> int:
        return len(self._ops)

    def node(self, ref: NodeRef) -> TapeNode:
        i = self._index(ref)
        return TapeNode(id=i, op=self._ops[i], parents=self._parents[i], value=self._values[i])

    def var(self, node_id: int) -> Var:
        self._check_id(node_id)
        return Var(self, node_id)

    # ------------------------------------------------------------------
    # construction

    def build(self, op: str, parents: Sequence[NodeRef], value_fn, meta: object = None) -> int:
        """
        Append a node and evaluate it eagerly

        Args:
            op: Primitive tag from OPS
            parents: Parent nodes on this tape
            value_fn: Callable mapping parent values to the node value
            meta: Op payload (pow exponent, sum weights)

        Returns:
            Index of the new node
        """
        if op not in OPS:
            raise TapeError(f"Unsupported tape op: {op}")
        ids = tuple(self._index(p) for p in parents)
        try:
            value = value_fn(*[self._values[p] for p in ids])
            value = float(value)
        except (ValueError, OverflowError, ZeroDivisionError, TypeError) as exc:
            raise TapeDomainError(f"{op} evaluated outside its domain: {exc}") from exc
        if not math.isfinite(value):
            raise TapeDomainError(f"{op} produced a non-finite value ({value})")

        node_id = len(self._ops)
        self._ops.append(op)
        self._parents.append(ids)
        self._values.append(value)
        self._meta.append(meta)
        if op == "param":
            live = True
        elif op in _BLOCKING:
            live = False
        else:
            live = any(self._live[p] for p in ids)
        self._live.append(live)
        return node_id

    def const(self, value: float) -> Var:
        v = float(value)
        return Var(self, self.build("const", (), lambda: v))

    def param(self, value: float) -> Var:
        v = float(value)
        return Var(self, self.build("param", (), lambda: v))

    def add(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        return Var(self, self.build("add", (a, b), lambda x, y: x + y))

    def mul(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        return Var(self, self.build("mul", (a, b), lambda x, y: x * y))

    def neg(self, a) -> Var:
        a = self._coerce(a)
        return Var(self, self.build("neg", (a,), lambda x: -x))

    def exp(self, a) -> Var:
        a = self._coerce(a)
        return Var(self, self.build("exp", (a,), math.exp))

    def log(self, a) -> Var:
        a = self._coerce(a)
        return Var(self, self.build("log", (a,), math.log))

    def pow(self, a, exponent: float) -> Var:
        a = self._coerce(a)
        k = float(exponent)
        return Var(self, self.build("pow", (a,), lambda x: math.pow(x, k), meta=k))

    def div(self, a, b) -> Var:
        a, b = self._coerce(a), self._coerce(b)
        return Var(self, self.build("div", (a, b), lambda x, y: x / y))

    def sum(self, xs: Sequence, weights: Optional[Sequence[float]] = None, bias: float = 0.0) -> Var:
        """Affine combination bias + Σ wᵢxᵢ as a single node"""
        nodes = [self._coerce(x) for x in xs]
        if weights is None:
            w = (1.0,) * len(nodes)
        else:
            w = tuple(float(c) for c in weights)
            if len(w) != len(nodes):
                raise TapeError(f"sum got {len(nodes)} nodes but {len(w)} weights")
        b = float(bias)

        def value_fn(*vals):
            total = b
            for c, v in zip(w, vals):
                total += c * v
            return total

        return Var(self, self.build("sum", nodes, value_fn, meta=w))

    def stop_gradient(self, a) -> Var:
        a = self._coerce(a)
        return Var(self, self.build("stop_gradient", (a,), lambda x: x))

    def magic_box(self, ws: Sequence) -> Var:
        """
        DiCE operator: forward value exactly 1, derivative reinjects Σw

        Args:
            ws: Log-probability nodes of the stochastic choices the cost depends on

        Returns:
            Node equal to exp(Σw − ⊥Σw)
        """
        nodes = [self._coerce(w) for w in ws]
        if not nodes:
            raise TapeError("magic_box needs at least one node")
        return Var(self, self.build("magic_box", nodes, lambda *_: 1.0))

    # ------------------------------------------------------------------
    # differentiation

    def gradient(self, req: GradRequest) -> list:
        """
        Reverse accumulation from req.output to every node in req.wrt

        Args:
            req: Gradient request; wrt nodes must be params

        Returns:
            One entry per wrt node: floats, or Vars when create_graph is set
        """
        out = self._index(req.output)
        wrt = [self._index(w) for w in req.wrt]
        for w in wrt:
            if self._ops[w] != "param":
                raise TapeError(f"gradient requested w.r.t. non-param node {w} (op {self._ops[w]})")
        if not wrt:
            return []

        graph = req.create_graph
        zero = self.const(0.0) if graph else 0.0
        lowest = min(wrt)
        if out < lowest:
            return [zero for _ in wrt]

        wrt_set = set(wrt)
        depends = self._dependency_mask(lowest, out, wrt_set)
        if not depends[out - lowest]:
            return [zero for _ in wrt]

        results: Dict[int, object] = {}
        if graph:
            pending: Dict[int, List[Var]] = {out: [self.const(1.0)]}
        else:
            adjoint: Dict[int, float] = {out: 1.0}

        for i in range(out, lowest - 1, -1):
            if not depends[i - lowest]:
                continue
            if graph:
                contribs = pending.pop(i, None)
                if contribs is None:
                    continue
                g = contribs[0] if len(contribs) == 1 else self.sum(contribs)
            else:
                g = adjoint.pop(i, None)
                if g is None:
                    continue
            if i in wrt_set:
                results[i] = g
                continue
            if graph:
                for p, contrib in self._graph_partials(i, g):
                    if p >= lowest and depends[p - lowest]:
                        pending.setdefault(p, []).append(contrib)
            else:
                for p, partial in self._float_partials(i):
                    if p >= lowest and depends[p - lowest]:
                        adjoint[p] = adjoint.get(p, 0.0) + g * partial

        return [results.get(w, zero) for w in wrt]

    def _dependency_mask(self, lowest: int, out: int, wrt_set: set) -> bytearray:
        mask = bytearray(out - lowest + 1)
        for i in range(lowest, out + 1):
            if i in wrt_set:
                mask[i - lowest] = 1
                continue
            if not self._live[i]:
                continue
            for p in self._parents[i]:
                if p >= lowest and mask[p - lowest]:
                    mask[i - lowest] = 1
                    break
        return mask

    def _float_partials(self, i: int) -> List[Tuple[int, float]]:
        op = self._ops[i]
        ps = self._parents[i]
        vals = self._values
        if op == "add":
            return [(ps[0], 1.0), (ps[1], 1.0)]
        if op == "mul":
            return [(ps[0], vals[ps[1]]), (ps[1], vals[ps[0]])]
        if op == "neg":
            return [(ps[0], -1.0)]
        if op == "exp":
            return [(ps[0], vals[i])]
        if op == "log":
            return [(ps[0], 1.0 / vals[ps[0]])]
        if op == "pow":
            k = self._meta[i]
            return [(ps[0], k * math.pow(vals[ps[0]], k - 1.0))]
        if op == "div":
            b = vals[ps[1]]
            return [(ps[0], 1.0 / b), (ps[1], -vals[i] / b)]
        if op == "sum":
            return list(zip(ps, self._meta[i]))
        if op == "magic_box":
            return [(p, vals[i]) for p in ps]
        return []

    def _graph_partials(self, i: int, g: Var) -> List[Tuple[int, Var]]:
        op = self._ops[i]
        ps = self._parents[i]
        if op == "add":
            return [(ps[0], g), (ps[1], g)]
        if op == "mul":
            return [(ps[0], self._times(g, ps[1])), (ps[1], self._times(g, ps[0]))]
        if op == "neg":
            return [(ps[0], self.sum([g], [-1.0]))]
        if op == "exp":
            return [(ps[0], self.mul(g, Var(self, i)))]
        if op == "log":
            return [(ps[0], self.div(g, Var(self, ps[0])))]
        if op == "pow":
            k = self._meta[i]
            if k == 1.0:
                return [(ps[0], g)]
            inner = self.mul(g, self.pow(Var(self, ps[0]), k - 1.0))
            return [(ps[0], self.sum([inner], [k]))]
        if op == "div":
            q = self.div(g, Var(self, ps[1]))
            return [(ps[0], q), (ps[1], self.sum([self.mul(q, Var(self, i))], [-1.0]))]
        if op == "sum":
            return [(p, g if c == 1.0 else self.sum([g], [c])) for p, c in zip(ps, self._meta[i])]
        if op == "magic_box":
            box = self.mul(g, Var(self, i))
            return [(p, box) for p in ps]
        return []

    def _times(self, g: Var, other: int) -> Var:
        # constant factors fold into a scaled sum
        if not self._live[other]:
            return self.sum([g], [self._values[other]])
        return self.mul(g, Var(self, other))

    # ------------------------------------------------------------------
    # helpers

    def _index(self, ref: NodeRef) -> int:
        if isinstance(ref, Var):
            if ref.tape is not self:
                raise TapeError("node belongs to a different tape")
            return ref.id
        if isinstance(ref, int) and not isinstance(ref, bool):
            self._check_id(ref)
            return ref
        raise TapeError(f"expected a tape node, got {type(ref).__name__}")

    def _check_id(self, node_id: int):
        if not 0 <= node_id < len(self._ops):
            raise TapeError(f"node {node_id} does not exist on this tape")

    def _coerce(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("node belongs to a different tape")
            return x
        if isinstance(x, (int, float)) and not isinstance(x, bool):
            return self.const(float(x))
        raise TapeError(f"cannot place {type(x).__name__} on the tape")


def grad(output: Var, wrt: Sequence[Var], create_graph: bool = False) -> list:
    """Shorthand for output.tape.gradient(GradRequest(...))"""
    return output.tape.gradient(GradRequest(output=output, wrt=list(wrt), create_graph=create_graph))
