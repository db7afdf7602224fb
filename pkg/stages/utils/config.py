from __future__ import annotations

import json
import os
import uuid
from pathlib import Path
from typing import Any, Dict, Generic, Optional, Type, TypeVar, Union, overload

from stages.utils.constants import ObjectHook
from stages.utils.errors import ConfigError, InputError

_T = TypeVar('_T')


class Config(Generic[_T]):
    """A database-like config object. Internally based on ``json``.

    Parameters
    ----------
    name : str | os.PathLike
        The path of the config file.
    object_hook : Optional[ObjectHook], optional
        A function that will be called on every decoded JSON object, by default None
    encoder : Optional[Type[json.JSONEncoder]], optional
        A custom JSON encoder, by default None
    indent : Optional[int], optional
        Indentation of the written document; ``None`` writes it compact.
    must_exist : bool, optional
        Whether a missing file is an error instead of an empty config, by default False

    Raises
    ------
    InputError
        If ``must_exist`` is set and the file doesn't exist, or it isn't valid JSON.
    """

    def __init__(
        self,
        name: str | os.PathLike[str],
        *,
        object_hook: Optional[ObjectHook] = None,
        encoder: Optional[Type[json.JSONEncoder]] = None,
        indent: Optional[int] = 2,
        must_exist: bool = False,
    ):
        self.path: Path = Path(name)
        self.object_hook = object_hook
        self.encoder = encoder
        self.indent = indent
        self._db: Dict[str, Union[_T, Any]] = {}

        self.load_from_file(must_exist=must_exist)

    @classmethod
    def from_mapping(cls, name: str | os.PathLike[str], data: Dict[str, Any], **kwargs: Any) -> Config[_T]:
        """Creates a config bound to ``name`` holding ``data`` without reading the file."""
        self = cls.__new__(cls)
        self.path = Path(name)
        self.object_hook = kwargs.get('object_hook')
        self.encoder = kwargs.get('encoder')
        self.indent = kwargs.get('indent', 2)
        self._db = dict(data)
        return self

    def load_from_file(self, *, must_exist: bool = False) -> None:
        """Loads the config from the file."""
        try:
            with open(self.path, 'r', encoding='utf-8') as f:
                self._db = json.load(f, object_hook=self.object_hook)
        except FileNotFoundError:
            if must_exist:
                raise InputError(f'{self.path} does not exist')
            self._db = {}
        except json.JSONDecodeError as exc:
            raise InputError(f'{self.path} is not valid JSON: {exc}') from None

        if not isinstance(self._db, dict):
            raise ConfigError(f'{self.path} must hold a JSON object at the top level')

    def dumps(self) -> str:
        """Serialises the config exactly as :meth:`save` writes it."""
        separators = (',', ':') if self.indent is None else (',', ': ')
        text = json.dumps(self._db, ensure_ascii=True, cls=self.encoder, indent=self.indent, separators=separators)
        return f'{text}\n'

    def save(self) -> None:
        """Atomically writes the config to its file."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        temp = self.path.with_name(f'{uuid.uuid4()}-{self.path.name}.tmp')
        with open(temp, 'w', encoding='utf-8', newline='\n') as tmp:
            tmp.write(self.dumps())

        os.replace(temp, self.path)

    @overload
    def get(self, key: Any) -> Optional[Union[_T, Any]]:
        ...

    @overload
    def get(self, key: Any, default: Any) -> Union[_T, Any]:
        ...

    def get(self, key: Any, default: Any = None) -> Optional[Union[_T, Any]]:
        """Retrieves a config entry."""
        return self._db.get(str(key), default)

    def all(self) -> Dict[str, Union[_T, Any]]:
        return self._db

    def __str__(self) -> str:
        return self.path.as_posix()


# option defaults a settings file may provide, per command
COMMAND_OPTIONS: dict[str, frozenset[str]] = {
    'train': frozenset({'segments', 'metric', 'select', 'discrepancy', 'runner', 'mass', 'distance', 'seed'}),
    'classify': frozenset({'lag', 'verify'}),
    'evaluate': frozenset({'verify'}),
    'simulate': frozenset({'seed', 'segments'}),
    'features': frozenset({'segments'}),
    'select': frozenset({'segments', 'metric', 'select'}),
    'energy': frozenset({'runner', 'mass'}),
    'bench': frozenset({'lag', 'repeat', 'seed', 'segments'}),
}
TOP_LEVEL_SETTINGS = frozenset({'log_level', 'log_file'})
# settings keys whose command parameter has another name
PARAMETER_NAMES = {'select': 'selection'}


class Settings:
    """The launcher settings file.

    A small JSON document with the keys ``log_level`` and ``log_file`` and one
    object per command holding option defaults, e.g.::

        {"log_level": "DEBUG", "train": {"segments": 44, "select": "argmax"}}
    """

    __slots__ = ('config',)

    def __init__(self, config: Config[Any]):
        self.config: Config[Any] = config
        self.validate()

    @classmethod
    def load(cls, path: str | os.PathLike[str], *, must_exist: bool = False) -> Settings:
        return cls(Config(path, must_exist=must_exist))

    def validate(self) -> None:
        for key, value in self.config.all().items():
            if key in TOP_LEVEL_SETTINGS:
                continue

            allowed = COMMAND_OPTIONS.get(key)
            if allowed is None:
                raise ConfigError(f'unknown settings key {key!r} in {self.config}')
            if not isinstance(value, dict):
                raise ConfigError(f'settings for {key!r} must be an object')

            unknown = sorted(set(value) - allowed)
            if unknown:
                raise ConfigError(f'unknown option(s) for {key!r}: {", ".join(unknown)}')

    @property
    def log_level(self) -> str:
        return str(self.config.get('log_level', 'INFO')).upper()

    @property
    def log_file(self) -> Optional[str]:
        return self.config.get('log_file')

    def default_map(self) -> dict[str, dict[str, Any]]:
        """Option defaults in the shape :attr:`click.Context.default_map` expects."""
        return {
            key: {PARAMETER_NAMES.get(option, option): v for option, v in value.items()}
            for key, value in self.config.all().items()
            if key in COMMAND_OPTIONS
        }
