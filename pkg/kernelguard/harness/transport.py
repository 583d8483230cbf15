import logging
import multiprocessing
import os
import pickle
import socket
import time
from functools import partial
from typing import Callable, List, Optional, Protocol, Sequence

import django

from core.exceptions import FrameDecodeError, KernelGuardError, TransportError
from harness.codec import ChannelFrame, encode_frame, read_frame

logger = logging.getLogger(__name__)

SOCKET_TIMEOUT = 10.0
ACCEPT_POLL = 0.1


class Endpoint(Protocol):
    """Plant-side node: a fixed number of frames in and out per step."""

    downlink: Sequence[str]
    uplink: Sequence[str]

    def handle(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        ...


EndpointFactory = Callable[[], Endpoint]


class InProcTransport:
    """Single-threaded transport: the plant endpoint is called directly."""

    name = 'inproc'

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint

    def __enter__(self) -> 'InProcTransport':
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def exchange(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        return self.endpoint.handle(frames)

    def close(self) -> None:
        pass


def _recv_exact(conn: socket.socket, n: int) -> bytes:
    chunks, received = [], 0
    while received < n:
        chunk = conn.recv(n - received)
        if not chunk:
            raise EOFError("conexión cerrada por el otro extremo")
        chunks.append(chunk)
        received += len(chunk)
    return b''.join(chunks)


def _report(errors, error: BaseException) -> None:
    try:
        errors.send(str(error))
    except OSError:
        pass


def serve_plant_node(factory_blob: bytes, host: str, port: int, errors) -> None:
    """
    Entry point of the plant process.

    The factory arrives pickled and is only loaded after Django is set up.
    Builds its own endpoint, connects to the monitor and answers one batch of
    downlink frames per step until the monitor closes the connection. Any
    failure is reported as text through ``errors``.
    """
    if os.environ.get('DJANGO_SETTINGS_MODULE'):
        django.setup()
    try:
        endpoint = pickle.loads(factory_blob)()
        conn = socket.create_connection((host, port))
    except Exception as e:
        _report(errors, e)
        return
    conn.settimeout(None)
    recv = partial(_recv_exact, conn)
    with conn:
        while True:
            try:
                first = read_frame(recv)
            except EOFError:
                break
            except (OSError, KernelGuardError) as e:
                _report(errors, e)
                break
            try:
                rest = [read_frame(recv) for _ in range(len(endpoint.downlink) - 1)]
                replies = endpoint.handle([first] + rest)
                conn.sendall(b''.join(encode_frame(f) for f in replies))
            except Exception as e:
                _report(errors, e)
                break
    errors.close()


class TcpTransport:
    """
    Lockstep frame exchange with a plant node running in its own process.

    The monitor side listens on ``host:port``; the child process builds the
    plant endpoint from ``factory`` (a picklable callable), connects back and
    from then on both sides share nothing but frames. Each step the monitor
    sends the downlink frames and blocks until ``len(uplink)`` frames return.

    Args:
        factory (EndpointFactory): Builds the plant endpoint inside the child.
        uplink (Sequence[str], optional): Uplink signals per step; defaults to
            ``factory.uplink`` when the factory is an endpoint class.
        host (str): Interface to bind.
        port (int): Port to bind, 0 for an ephemeral one.
        timeout (float): Seconds before the connection or a blocked read fails.
    """

    name = 'tcp'

    def __init__(self, factory: EndpointFactory, uplink: Optional[Sequence[str]] = None,
                 host: str = '127.0.0.1', port: int = 0, timeout: float = SOCKET_TIMEOUT):
        self.uplink = tuple(uplink if uplink is not None else factory.uplink)
        try:
            factory_blob = pickle.dumps(factory)
        except (pickle.PicklingError, AttributeError, TypeError) as e:
            raise TransportError(f"La fábrica del nodo de planta no es serializable: {e}") from e
        self.host = host
        self.timeout = timeout
        self._conn: Optional[socket.socket] = None
        self._server = socket.create_server((host, port))
        self._server.settimeout(ACCEPT_POLL)
        self.port = self._server.getsockname()[1]

        ctx = multiprocessing.get_context('spawn')
        self._errors, child_errors = ctx.Pipe(duplex=False)
        self._process = ctx.Process(target=serve_plant_node, args=(factory_blob, host, self.port, child_errors),
                                    name='kernelguard-plant', daemon=True)
        self._process.start()
        child_errors.close()
        try:
            self._conn = self._accept()
        except TransportError:
            self.close()
            raise
        self._conn.settimeout(timeout)
        logger.info("Nodo de planta (pid %d) conectado en %s:%d", self._process.pid, host, self.port)

    def __enter__(self) -> 'TcpTransport':
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def plant_pid(self) -> Optional[int]:
        return self._process.pid

    def _child_error(self, wait: float) -> Optional[str]:
        try:
            if self._errors.poll(wait):
                return self._errors.recv()
        except (EOFError, OSError):
            pass
        return None

    def _accept(self) -> socket.socket:
        # 1. Esperar la conexión del nodo de planta
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            try:
                conn, _ = self._server.accept()
                return conn
            except socket.timeout:
                pass
            alive = self._process.is_alive()
            error = self._child_error(0)
            if error is not None:
                raise TransportError(f"El nodo de planta falló: {error}")
            if not alive:
                raise TransportError(f"El nodo de planta terminó con código {self._process.exitcode}")
        raise TransportError(f"El nodo de planta no se conectó en {self.timeout} s")

    def exchange(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        try:
            self._conn.sendall(b''.join(encode_frame(f) for f in frames))
            return [read_frame(lambda n: _recv_exact(self._conn, n)) for _ in self.uplink]
        except FrameDecodeError:
            raise
        except (OSError, EOFError) as e:
            error = self._child_error(1.0)
            if error is not None:
                raise TransportError(f"El nodo de planta falló: {error}") from e
            raise TransportError(f"Fallo en el intercambio de tramas: {e}") from e

    def close(self) -> None:
        for sock in (self._conn, self._server):
            if sock is None:
                continue
            try:
                sock.close()
            except OSError:
                pass
        self._process.join(timeout=self.timeout)
        if self._process.is_alive():
            logger.warning("El nodo de planta no terminó, se fuerza su cierre")
            self._process.terminate()
            self._process.join()
        self._errors.close()
        logger.info("Transporte TCP cerrado (%s:%d)", self.host, self.port)


TRANSPORTS = {
    InProcTransport.name: InProcTransport,
    TcpTransport.name: TcpTransport,
}


def open_transport(name: str, factory: EndpointFactory, **kwargs):
    """
    Open a transport to the plant endpoint built by ``factory``.

    ``inproc`` calls the factory here; ``tcp`` ships it to a child process.

    Raises:
        TransportError: If the name is unknown or the plant node cannot start.
    """
    if name not in TRANSPORTS:
        raise TransportError(f"Transporte desconocido: {name}")
    if name == InProcTransport.name:
        return InProcTransport(factory())
    return TRANSPORTS[name](factory, **kwargs)
