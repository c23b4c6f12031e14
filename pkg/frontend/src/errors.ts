/**
 * Exception hierarchy for the application client.
 *
 * Local failures (bad config, stale handles, misuse of a connection)
 * are distinguished from errors the node itself reported, which carry
 * the wire-level error code and the node's name.
 */

export class AppClientError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** Malformed network configuration or an unknown node name. */
export class ConfigError extends AppClientError {}

/** Malformed or inconsistent wire data. */
export class ProtocolError extends AppClientError {}

/** TCP connection to a node could not be established. */
export class ConnectError extends AppClientError {}

/** The session dropped, or an operation was attempted after close(). */
export class ConnectionClosedError extends AppClientError {}

/** An operation used a qubit handle that is no longer usable. */
export class InactiveHandleError extends AppClientError {}

/** A local wait (reply, classical receive) expired. */
export class TimeoutError extends AppClientError {}

/** The application-level classical channel failed. */
export class ClassicalChannelError extends AppClientError {}

/**
 * An error reply from the node. `code` is the wire-level reply type and
 * `node` names the connection the reply arrived on.
 */
export class ServerError extends AppClientError {
  readonly code: number;
  readonly node: string;

  constructor(message: string, code: number, node: string) {
    super(message);
    this.code = code;
    this.node = node;
  }
}

/** Command failed for an unclassified reason (malformed payload, limits). */
export class GeneralServerError extends ServerError {}

/** The node is out of qubit or register capacity. */
export class ResourceError extends ServerError {}

/** Qubit id does not resolve to an active qubit. */
export class UnknownQubitError extends ServerError {}

/** Peer refused the operation (e.g. a full receive queue). */
export class UnavailableError extends ServerError {}

/** The qubit exists but belongs to another application. */
export class DeniedError extends ServerError {}

/** The node does not speak the client's protocol version. */
export class VersionMismatchError extends ServerError {}

/** Recognized but unsupported instruction or option combination. */
export class UnsupportedError extends ServerError {}

/** A blocking receive expired on the node with nothing delivered. */
export class ServerTimeoutError extends ServerError {}

/** The qubit id refers to a qubit the application explicitly released. */
export class QubitExpiredError extends ServerError {
  readonly qubitId: number;

  constructor(code: number, node: string, qubitId: number) {
    super(`qubit ${qubitId} was released earlier`, code, node);
    this.qubitId = qubitId;
  }
}
