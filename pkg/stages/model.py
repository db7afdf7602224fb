"""Versioned JSON model files."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, TypedDict

import numpy as np

from stages.classify import TrainedModel
from stages.filtering import FilterParams
from stages.ingest import RunnerProfile
from stages.select import Metric, RelevanceDistribution, feature_name
from stages.trend import TrendModel
from stages.utils.config import Config
from stages.utils.constants import SCHEMA_VERSION
from stages.utils.errors import IntegrityError, SchemaVersionError, ValidationError
from stages.utils.helpers import BasicJSONEncoder, file_digest, utcnow

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)

SECTIONS = ('schema_version', 'profile', 'N', 'metric', 'speeds', 'trend', 'relevance', 'filter_params', 'provenance')


class InputRecord(TypedDict):
    role: str
    path: str
    sha256: str


@dataclass(frozen=True)
class Provenance:
    created: str
    inputs: tuple[InputRecord, ...] = field(default=())
    seed: Optional[int] = None

    @classmethod
    def collect(cls, inputs: dict[str, str | os.PathLike[str]], *, seed: Optional[int] = None) -> Provenance:
        """Digests every input file; ``inputs`` maps a role such as ``run1.knee`` to a path."""
        records = tuple(
            InputRecord(role=role, path=os.fspath(path), sha256=file_digest(path))
            for role, path in inputs.items()
        )
        return cls(created=utcnow().isoformat(), inputs=records, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {'created': self.created, 'seed': self.seed, 'inputs': [dict(r) for r in self.inputs]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Provenance:
        return cls(
            created=str(data['created']),
            inputs=tuple(InputRecord(role=r['role'], path=r['path'], sha256=r['sha256']) for r in data.get('inputs', ())),
            seed=data.get('seed'),
        )

    def verify(self) -> None:
        """Recomputes every recorded digest.

        Raises
        ------
        IntegrityError
            A recorded input is missing or its digest changed.
        """
        for record in self.inputs:
            if not os.path.exists(record['path']):
                raise IntegrityError(f'{record["role"]} input {record["path"]!r} is missing, cannot verify')
            digest = file_digest(record['path'])
            if digest != record['sha256']:
                raise IntegrityError(f'{record["role"]} input {record["path"]!r} changed since training')
        log.debug('Verified %d input digests', len(self.inputs))


@dataclass(frozen=True, eq=False)
class ModelFile:
    model: TrainedModel
    provenance: Provenance
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        model = self.model
        n = model.relevance.n
        filters: list[dict[str, Any]] = []
        for j, params in zip(model.selected.tolist(), model.filter_params):
            record: dict[str, Any] = {'feature': feature_name(j, n)}
            if params is None:
                record['bypass'] = True
            else:
                record.update(params.to_dict())
            filters.append(record)

        return {
            'schema_version': self.schema_version,
            'profile': model.profile.to_dict(),
            'N': model.N,
            'metric': model.metric.value,
            'speeds': model.speeds.tolist(),
            'trend': model.trend.to_records(),
            'relevance': model.relevance.to_dict(),
            'filter_params': filters,
            'provenance': self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelFile:
        version = data.get('schema_version')
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(f'model schema version {version!r} is not supported (expected {SCHEMA_VERSION})')

        missing = [name for name in SECTIONS if name not in data]
        if missing:
            raise ValidationError(f'model file lacks section(s): {", ".join(missing)}')

        try:
            N = int(data['N'])
            model = TrainedModel(
                profile=RunnerProfile.from_dict(data['profile']),
                trend=TrendModel.from_records(data['trend'], N),
                relevance=RelevanceDistribution.from_dict(data['relevance']),
                filter_params=tuple(
                    None if record.get('bypass') else FilterParams.from_dict(record)
                    for record in data['filter_params']
                ),
                speeds=np.asarray(data['speeds'], dtype=np.float64),
                metric=Metric(data['metric']),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f'model file is malformed: {exc!r}') from None

        return cls(model=model, provenance=Provenance.from_dict(data['provenance']), schema_version=version)

    def dumps(self) -> str:
        return Config.from_mapping('model.json', self.to_dict(), encoder=BasicJSONEncoder).dumps()

    def save(self, path: str | os.PathLike[str]) -> None:
        Config.from_mapping(path, self.to_dict(), encoder=BasicJSONEncoder).save()
        log.info('Wrote model to %s', os.fspath(path))


def load_model(path: str | os.PathLike[str], *, verify: bool = False) -> ModelFile:
    """Reads a model file, optionally re-checking the training input digests."""
    model_file = ModelFile.from_dict(Config(path, must_exist=True).all())
    if verify:
        model_file.provenance.verify()
    return model_file
