"""P2P stream processing with queue fallback: master, workers, source."""

from .cluster import LocalCluster
from .master import (
    EMPTY_QUEUE_ID,
    Master,
    MasterQueue,
    NoWorkersRegistered,
    RouteDecision,
    WorkerRegistration,
    WorkerRegistry,
)
from .reconcile import DrainTimeout, ReconcileReport, drain_and_reconcile
from .source import SendReport, SourceError, StreamSource
from .worker import MasterUnreachable, ProcessingRecord, Worker

__all__ = [
    "EMPTY_QUEUE_ID",
    "DrainTimeout",
    "LocalCluster",
    "Master",
    "MasterQueue",
    "MasterUnreachable",
    "NoWorkersRegistered",
    "ProcessingRecord",
    "ReconcileReport",
    "RouteDecision",
    "SendReport",
    "SourceError",
    "StreamSource",
    "Worker",
    "WorkerRegistration",
    "WorkerRegistry",
    "drain_and_reconcile",
]
