"""Compile emitted C to a shared object and load it through ctypes."""

from __future__ import annotations

import ctypes
import hashlib
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .codegen import EmittedUnit

__all__ = [
    "Toolchain",
    "KernelHandle",
    "ToolchainError",
    "compile_and_load",
    "VERIFY_FLAGS",
    "BENCH_FLAGS",
]

VERIFY_FLAGS = ("-O2", "-fopenmp-simd")
BENCH_FLAGS = ("-O3", "-march=native", "-ffast-math", "-fopenmp")


class ToolchainError(Exception):
    """Compiler failure; carries the compiler's stderr verbatim."""


@dataclass(frozen=True)
class Toolchain:
    cc: str = field(default_factory=lambda: os.environ.get("FEVEC_CC", "cc"))
    flags: tuple = VERIFY_FLAGS
    template: str = "{cc} {flags} -shared -fPIC -o {out} {src} -lm"

    def command(self, src: str, out: str) -> list:
        line = self.template.format(
            cc=self.cc, flags=" ".join(self.flags), src=src, out=out
        )
        return shlex.split(line)


class KernelHandle:
    """A loaded wrapper entry point, callable with named numpy buffers."""

    def __init__(self, lib, unit: EmittedUnit, workdir):
        self._lib = lib
        self._workdir = workdir  # keep the tempdir (and .so) alive
        self.unit = unit
        try:
            self._fn = getattr(lib, unit.entry)
        except AttributeError:
            raise ToolchainError(
                f"symbol {unit.entry!r} missing from compiled object"
            ) from None
        argtypes = []
        for name, dtype, intent in unit.args:
            if dtype == "int32" and name in ("start", "end"):
                argtypes.append(ctypes.c_int32)
            elif dtype == "int32":
                argtypes.append(ctypes.POINTER(ctypes.c_int32))
            else:
                argtypes.append(ctypes.POINTER(ctypes.c_double))
        self._fn.argtypes = argtypes
        self._fn.restype = None

    def __call__(self, start: int, end: int, bindings: dict) -> None:
        args = [ctypes.c_int32(start), ctypes.c_int32(end)]
        for name, dtype, intent in self.unit.args[2:]:
            try:
                buf = bindings[name]
            except KeyError:
                raise KeyError(f"no binding for kernel argument {name!r}") from None
            want = np.float64 if dtype == "real64" else np.int32
            buf = np.ascontiguousarray(buf)
            if buf.dtype != want:
                raise TypeError(
                    f"binding {name!r} has dtype {buf.dtype}, expected "
                    f"{np.dtype(want)}"
                )
            ct = ctypes.c_double if dtype == "real64" else ctypes.c_int32
            args.append(buf.ctypes.data_as(ctypes.POINTER(ct)))
        self._fn(*args)


def compile_and_load(unit: EmittedUnit, toolchain: Toolchain = None) -> KernelHandle:
    """Write the source, invoke the C compiler, and dlopen the result."""
    if toolchain is None:
        toolchain = Toolchain()
    workdir = tempfile.TemporaryDirectory(prefix="fevec-jit-")
    tag = hashlib.sha256(unit.source.encode()).hexdigest()[:12]
    src = os.path.join(workdir.name, f"{unit.entry}_{tag}.c")
    out = os.path.join(workdir.name, f"{unit.entry}_{tag}.so")
    with open(src, "w") as f:
        f.write(unit.source)
    cmd = toolchain.command(src, out)
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except FileNotFoundError:
        raise ToolchainError(f"compiler {cmd[0]!r} not found") from None
    if proc.returncode != 0:
        raise ToolchainError(
            f"compiler exited with status {proc.returncode}\n"
            f"command: {' '.join(cmd)}\n{proc.stderr}"
        )
    lib = ctypes.CDLL(out)
    return KernelHandle(lib, unit, workdir)
