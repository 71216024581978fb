"""Virtual organization directory and gridmap-file generation.

The central directory stands in for the LDAP-backed group manager; each site
holds an immutable gridmap snapshot that is refreshed on a fixed cadence, so a
user added centrally is denied at a site until that site's next sync.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class CertAuthority(str, Enum):
    GLOBUS = "Globus"
    DOESG = "DOESG"


class VOError(ValueError):
    pass


@dataclass
class GridUser:
    dn: str
    ca: CertAuthority = CertAuthority.DOESG
    groups: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if not self.dn:
            raise VOError("user DN must be non-empty")
        self.ca = CertAuthority(self.ca)


@dataclass
class UserDirectory:
    groups: dict[str, list[str]] = field(default_factory=dict)
    local_account_map: dict[str, str] = field(default_factory=dict)
    users: dict[str, GridUser] = field(default_factory=dict)

    def create_group(self, group: str, local_account: str) -> UserDirectory:
        if group in self.groups:
            raise VOError(f"group {group!r} already exists")
        if not local_account or " " in local_account:
            raise VOError(f"bad local account {local_account!r} for group {group!r}")
        self.groups[group] = []
        self.local_account_map[group] = local_account
        return self

    def add_user(self, user: GridUser, group: str) -> UserDirectory:
        if group not in self.groups:
            raise VOError(f"unknown group {group!r}")
        known = self.users.get(user.dn)
        if known is None:
            known = self.users[user.dn] = GridUser(user.dn, user.ca)
        if user.dn not in self.groups[group]:
            self.groups[group].append(user.dn)
        known.groups.add(group)
        return self

    def remove_user(self, dn: str, group: str) -> UserDirectory:
        if group not in self.groups:
            raise VOError(f"unknown group {group!r}")
        if dn in self.groups[group]:
            self.groups[group].remove(dn)
            self.users[dn].groups.discard(group)
        return self

    def member_count(self, group: str) -> int:
        return len(self.groups[group])


def create_group(directory: UserDirectory, group: str, local_account: str) -> UserDirectory:
    return directory.create_group(group, local_account)


def add_user(directory: UserDirectory, user: GridUser, group: str) -> UserDirectory:
    return directory.add_user(user, group)


def mkgridmap(directory: UserDirectory) -> str:
    """One `"<DN>" <account>` line per (user, group) membership, sorted."""
    entries = sorted(
        (dn, directory.local_account_map[group]) for group, members in directory.groups.items() for dn in members
    )
    return "".join(f'"{dn}" {account}\n' for dn, account in entries)


def parse_gridmap(text: str) -> list[tuple[str, str]]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if not line.startswith('"') or '" ' not in line:
            raise VOError(f"gridmap line {lineno}: expected '\"<DN>\" <account>'")
        dn, account = line[1:].split('" ', 1)
        entries.append((dn, account.strip()))
    return entries


def authorize(site_gridmap: str | list[tuple[str, str]], dn: str) -> str | None:
    """Local account for `dn` (first matching entry), or None when denied."""
    entries = parse_gridmap(site_gridmap) if isinstance(site_gridmap, str) else site_gridmap
    for entry_dn, account in entries:
        if entry_dn == dn:
            return account
    return None


class GridmapSync:
    """Per-site gridmap snapshots refreshed from the central directory."""

    def __init__(self, directory: UserDirectory, sites: list[str], interval: float = 6 * 3600.0):
        if interval <= 0:
            raise VOError("sync interval must be > 0")
        self.directory = directory
        self.interval = interval
        self._maps: dict[str, dict[str, str]] = {s: {} for s in sites}
        self.epoch: dict[str, int] = {s: 0 for s in sites}
        self.synced_at: dict[str, float] = {s: -math.inf for s in sites}

    def sync(self, site: str, now: float) -> str:
        text = mkgridmap(self.directory)
        mapping: dict[str, str] = {}
        for dn, account in parse_gridmap(text):
            mapping.setdefault(dn, account)
        self._maps[site] = mapping
        self.epoch[site] += 1
        self.synced_at[site] = now
        return text

    def authorize(self, site: str, dn: str) -> str | None:
        return self._maps[site].get(dn)

    def next_sync(self, site: str, now: float) -> float:
        last = self.synced_at[site]
        if math.isinf(last):
            return now
        return last + self.interval * (math.floor((now - last) / self.interval) + 1)
