"""Filesystem-backed operator registry.

Layout under one root directory:

    <root>/<name>/<version>/manifest.json
    <root>/<name>/<version>/package/...

The manifest is a canonical JSON document describing how to run the
operator; the package directory is its code, copied verbatim.  A version is
immutable once published.  Publication is crash-safe: content is staged into
a hidden sibling directory and renamed into place, with an exclusive flock
serializing the existence check and rename, so concurrent publishers of the
same version see exactly one winner.  The registry keeps no state outside
the root, so any process pointed at the same directory sees the same
catalogue.
"""
from __future__ import annotations

import argparse
import fcntl
import hashlib
import json
import os
import re
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import contract
from .canonical import CanonicalError, canonical_bytes, parse_canonical

__all__ = [
    "OperatorDescriptor",
    "Registry",
    "RegistryError",
    "NotFound",
    "ConflictError",
    "CorruptPackage",
    "package_checksum",
    "main",
]

_NAME_RE = re.compile(r"^[a-z0-9][a-z0-9-]{0,39}$")
_VERSION_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,31}$")
_SEMVER_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")


class RegistryError(Exception):
    pass


class NotFound(RegistryError):
    pass


class ConflictError(RegistryError):
    pass


class CorruptPackage(RegistryError):
    pass


@dataclass(frozen=True)
class OperatorDescriptor:
    """What the registry knows about one published operator version."""

    name: str
    version: str
    command: tuple[str, ...]
    checksum: str
    created_at: float
    runtime: str = "process"

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "command": list(self.command),
            "checksum": self.checksum,
            "created_at": self.created_at,
            "runtime": self.runtime,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "OperatorDescriptor":
        try:
            command = doc["command"]
            if not isinstance(command, list) or not all(
                isinstance(part, str) for part in command
            ):
                raise TypeError("command must be a list of strings")
            return cls(
                name=doc["name"],
                version=doc["version"],
                command=tuple(command),
                checksum=doc["checksum"],
                created_at=float(doc["created_at"]),
                runtime=doc.get("runtime", "process"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptPackage(f"bad manifest: {exc}") from exc


def package_checksum(package_dir: Path) -> str:
    """Content hash of a package directory.

    Files are visited in sorted relative-path order; each contributes its
    path, size, and bytes.  Renaming, adding, or editing any file changes
    the digest.  Symlinks are refused so a package cannot reach outside
    its directory.
    """
    digest = hashlib.sha256()
    package_dir = Path(package_dir)
    paths = []
    for base, dirs, files in os.walk(package_dir):
        dirs.sort()
        for fname in files:
            paths.append(Path(base) / fname)
    for path in sorted(paths, key=lambda p: str(p.relative_to(package_dir))):
        if path.is_symlink():
            raise CorruptPackage(f"symlink not allowed in package: {path}")
        rel = str(path.relative_to(package_dir))
        data = path.read_bytes()
        digest.update(b"%s\x00%d\x00" % (rel.encode("utf-8"), len(data)))
        digest.update(data)
    return "sha256:" + digest.hexdigest()


def _semver_key(version: str, created_at: float) -> tuple:
    match = _SEMVER_RE.match(version)
    if match:
        return (1, tuple(int(part) for part in match.groups()), created_at)
    return (0, (), created_at)


class Registry:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _lock_path(self) -> Path:
        return self.root / ".lock"

    def publish(
        self,
        name: str,
        version: str,
        command: list[str] | tuple[str, ...],
        package_dir: Path | str,
        *,
        runtime: str = "process",
    ) -> OperatorDescriptor:
        """Copy a package into the registry under an immutable version tag."""
        if not _NAME_RE.match(name):
            raise RegistryError(f"invalid operator name {name!r}")
        if not _VERSION_RE.match(version):
            raise RegistryError(f"invalid version {version!r}")
        if not command:
            raise RegistryError("command must be non-empty")
        package_dir = Path(package_dir)
        if not package_dir.is_dir():
            raise RegistryError(f"package dir {package_dir} is not a directory")

        descriptor = OperatorDescriptor(
            name=name,
            version=version,
            command=tuple(command),
            checksum=package_checksum(package_dir),
            created_at=time.time(),
            runtime=runtime,
        )
        name_dir = self.root / name
        name_dir.mkdir(parents=True, exist_ok=True)
        final = name_dir / version
        staging = name_dir / f".staging-{version}-{os.getpid()}-{time.monotonic_ns()}"
        try:
            shutil.copytree(package_dir, staging / "package", symlinks=False)
            (staging / "manifest.json").write_bytes(canonical_bytes(descriptor.to_doc()))
            with open(self._lock_path(), "w") as lock_file:
                fcntl.flock(lock_file, fcntl.LOCK_EX)
                try:
                    if final.exists():
                        raise ConflictError(f"{name}@{version} already published")
                    os.rename(staging, final)
                finally:
                    fcntl.flock(lock_file, fcntl.LOCK_UN)
        finally:
            if staging.exists():
                shutil.rmtree(staging, ignore_errors=True)
        return descriptor

    def versions(self, name: str) -> list[str]:
        name_dir = self.root / name
        if not name_dir.is_dir():
            raise NotFound(f"no operator named {name!r}")
        found = [
            entry.name
            for entry in name_dir.iterdir()
            if entry.is_dir() and not entry.name.startswith(".")
        ]
        if not found:
            raise NotFound(f"no operator named {name!r}")
        return sorted(found)

    def _read_manifest(self, name: str, version: str) -> OperatorDescriptor:
        manifest_path = self.root / name / version / "manifest.json"
        try:
            raw = manifest_path.read_bytes()
        except FileNotFoundError:
            raise CorruptPackage(f"{name}@{version}: manifest missing") from None
        try:
            doc = parse_canonical(raw)
        except CanonicalError as exc:
            raise CorruptPackage(f"{name}@{version}: {exc}") from exc
        if not isinstance(doc, dict):
            raise CorruptPackage(f"{name}@{version}: manifest is not an object")
        return OperatorDescriptor.from_doc(doc)

    def latest_version(self, name: str) -> str:
        best = None
        best_key = None
        for version in self.versions(name):
            descriptor = self._read_manifest(name, version)
            key = _semver_key(version, descriptor.created_at)
            if best_key is None or key > best_key:
                best, best_key = version, key
        assert best is not None
        return best

    def fetch(self, name: str, version: Optional[str] = None) -> tuple[OperatorDescriptor, Path]:
        """Return the descriptor and on-disk package path, verifying content.

        A checksum mismatch (someone edited files under the registry root)
        raises CorruptPackage rather than handing out tampered code.
        """
        if version is None:
            version = self.latest_version(name)
        version_dir = self.root / name / version
        if not version_dir.is_dir():
            try:
                known = self.versions(name)
            except NotFound:
                raise NotFound(f"no operator named {name!r}") from None
            raise NotFound(f"{name}@{version} not published (have: {', '.join(known)})")
        descriptor = self._read_manifest(name, version)
        package_dir = version_dir / "package"
        if not package_dir.is_dir():
            raise CorruptPackage(f"{name}@{version}: package directory missing")
        actual = package_checksum(package_dir)
        if actual != descriptor.checksum:
            raise CorruptPackage(
                f"{name}@{version}: checksum mismatch "
                f"(manifest {descriptor.checksum}, content {actual})"
            )
        return descriptor, package_dir

    def list(self) -> list[OperatorDescriptor]:
        out = []
        if not self.root.is_dir():
            return out
        for name_dir in sorted(self.root.iterdir()):
            if not name_dir.is_dir() or name_dir.name.startswith("."):
                continue
            for version_dir in sorted(name_dir.iterdir()):
                if not version_dir.is_dir() or version_dir.name.startswith("."):
                    continue
                out.append(self._read_manifest(name_dir.name, version_dir.name))
        return out


def _registry_from_args(args) -> Registry:
    root = args.registry_root or os.environ.get(contract.ENV_REGISTRY)
    if not root:
        raise SystemExit("no registry root: pass --registry-root or set " + contract.ENV_REGISTRY)
    return Registry(root)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="cepless-registry", description="Operator registry.")
    parser.add_argument("--registry-root", help=f"store directory (or ${contract.ENV_REGISTRY})")
    sub = parser.add_subparsers(dest="cmd", required=True)

    pub = sub.add_parser("publish", help="publish a package directory as a new version")
    pub.add_argument("name")
    pub.add_argument("version")
    pub.add_argument("--package", required=True, help="directory with the operator code")
    pub.add_argument(
        "--command",
        required=True,
        help="run command, whitespace-split (e.g. 'python3 main.py')",
    )
    pub.add_argument("--runtime", default="process")

    sub.add_parser("list", help="list all published versions")

    show = sub.add_parser("show", help="print one manifest")
    show.add_argument("name")
    show.add_argument("version", nargs="?")

    args = parser.parse_args(argv)
    registry = _registry_from_args(args)
    try:
        if args.cmd == "publish":
            descriptor = registry.publish(
                args.name,
                args.version,
                args.command.split(),
                args.package,
                runtime=args.runtime,
            )
            print(f"published {descriptor.name}@{descriptor.version} {descriptor.checksum}")
        elif args.cmd == "list":
            for descriptor in registry.list():
                print(
                    f"{descriptor.name}@{descriptor.version}"
                    f"  runtime={descriptor.runtime}"
                    f"  command={' '.join(descriptor.command)}"
                )
        elif args.cmd == "show":
            descriptor, package_dir = registry.fetch(args.name, args.version)
            print(json.dumps(descriptor.to_doc(), indent=2, sort_keys=True))
            print(f"package: {package_dir}")
    except RegistryError as exc:
        print(f"error: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
