/**
 * Application client for the simulated quantum network.
 *
 * Connect to a node by name, create and manipulate qubits through
 * handles, ship qubits and entangled-pair halves between nodes, and
 * exchange classical messages between applications:
 *
 *     const Alice = await connect("Alice", "network.conf");
 *     const q = await Alice.newQubit();
 *     await q.H();
 *     const outcome = await q.measure();
 *     await Alice.close();
 */

export {
  Connection,
  QubitHandle,
  connect,
  type ConnectOptions,
  type Reply,
} from "./connection.js";
export {
  CLASSICAL_PORT_OFFSET,
  ClassicalMailbox,
  MAX_MESSAGE,
  sendClassicalMessage,
  type SendOptions,
} from "./classical.js";
export {
  NodeDirectory,
  hostIpv4,
  intToIpv4,
  ipv4ToInt,
  loadConfig,
  parseConfig,
  renderConfig,
  type NodeEntry,
} from "./netconf.js";
export * as codec from "./codec.js";
export {
  AppClientError,
  ClassicalChannelError,
  ConfigError,
  ConnectError,
  ConnectionClosedError,
  DeniedError,
  GeneralServerError,
  InactiveHandleError,
  ProtocolError,
  QubitExpiredError,
  ResourceError,
  ServerError,
  ServerTimeoutError,
  TimeoutError,
  UnavailableError,
  UnknownQubitError,
  UnsupportedError,
  VersionMismatchError,
} from "./errors.js";
