"""
Instance Files
JSON documents holding generation parameters and dense row-major arrays
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError as SchemaError, model_validator

from exceptions import ValidationError
from group_lasso import GroupLassoInstance
from rpca import RpcaInstance

logger = logging.getLogger(__name__)

INSTANCE_FORMAT_VERSION = 1


class ArrayPayload(BaseModel):
    dtype: Literal["float64"] = "float64"
    shape: List[int]
    data: List[float]

    @model_validator(mode="after")
    def _check_size(self):
        expected = int(np.prod(self.shape)) if self.shape else 1
        if len(self.data) != expected:
            raise ValueError(f"shape {self.shape} needs {expected} entries, got {len(self.data)}")
        return self

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ArrayPayload":
        array = np.ascontiguousarray(array, dtype=np.float64)
        return cls(shape=list(array.shape), data=array.ravel(order="C").tolist())

    def to_array(self) -> np.ndarray:
        return np.array(self.data, dtype=np.float64).reshape(self.shape, order="C")


class InstanceFile(BaseModel):
    format_version: int = Field(INSTANCE_FORMAT_VERSION, ge=1, le=INSTANCE_FORMAT_VERSION)
    kind: Literal["rpca", "group-lasso"]
    params: Dict[str, Any] = Field(default_factory=dict)
    arrays: Dict[str, ArrayPayload]
    groups: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def _check_kind(self):
        required = {"rpca": {"M"}, "group-lasso": {"A_data", "b", "weights"}}[self.kind]
        missing = required - set(self.arrays)
        if missing:
            raise ValueError(f"{self.kind} instance is missing arrays: {sorted(missing)}")
        if self.kind == "group-lasso" and not self.groups:
            raise ValueError("group-lasso instance needs 'groups'")
        if self.kind == "rpca" and not {"gamma2", "gamma3"} <= set(self.params):
            raise ValueError("rpca instance needs params gamma2 and gamma3")
        if self.kind == "group-lasso" and "lam" not in self.params:
            raise ValueError("group-lasso instance needs param lam")
        return self


Instance = Union[RpcaInstance, GroupLassoInstance]


def to_document(instance: Instance) -> InstanceFile:
    if isinstance(instance, RpcaInstance):
        arrays = {"M": instance.M}
        for key in ("L", "S", "V"):
            if getattr(instance, key) is not None:
                arrays[key] = getattr(instance, key)
        params = dict(instance.params, gamma2=instance.gamma2, gamma3=instance.gamma3)
        return InstanceFile(kind="rpca", params=params,
                            arrays={k: ArrayPayload.from_array(v) for k, v in arrays.items()})
    arrays = {"A_data": instance.A_data, "b": instance.b, "weights": instance.weights}
    if instance.x_true is not None:
        arrays["x_true"] = instance.x_true
    return InstanceFile(kind="group-lasso", params=dict(instance.params, lam=instance.lam),
                        arrays={k: ArrayPayload.from_array(v) for k, v in arrays.items()},
                        groups=[[int(i) for i in g] for g in instance.groups])


def from_document(doc: InstanceFile) -> Instance:
    arrays = {k: v.to_array() for k, v in doc.arrays.items()}
    params = dict(doc.params)
    if doc.kind == "rpca":
        gamma2 = float(params.pop("gamma2"))
        gamma3 = float(params.pop("gamma3"))
        return RpcaInstance(arrays["M"], gamma2, gamma3, arrays.get("L"), arrays.get("S"), arrays.get("V"), params)
    lam = float(params.pop("lam"))
    return GroupLassoInstance(arrays["A_data"], arrays["b"], [np.array(g, dtype=int) for g in doc.groups],
                              arrays["weights"], lam, arrays.get("x_true"), dict(params, lam=lam))


def save_instance(instance: Instance, path: Union[str, Path]) -> Path:
    """Written to a temporary file and moved into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = to_document(instance).model_dump()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(document, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"saved {document['kind']} instance to {path}")
    return path


def load_instance(path: Union[str, Path]) -> Instance:
    path = Path(path)
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"Instance file {path} not found")
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON (line {e.lineno}): {e.msg}")
    try:
        doc = InstanceFile.model_validate(raw)
    except SchemaError as e:
        raise ValidationError(f"{path}: {e}") from e
    return from_document(doc)
