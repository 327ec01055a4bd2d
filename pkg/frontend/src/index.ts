export {
  BeamAction,
  DELTA_MAX,
  DELTA_MIN,
  H_CATALOG_SIZE,
  PROTOCOL_VERSION,
  ProtocolError,
  RewardWeights,
  ServerMessage,
  StatePayload,
  V_CATALOG_SIZE,
  ValidationError,
  WEIGHT_KEYS,
  encodeClose,
  encodeHello,
  encodeReset,
  encodeStep,
  parseServerLine,
  validateAction,
  validateBeamAction,
  validateWeights,
} from "./protocol.js";

export {
  ConnectionRefused,
  RemoteEnv,
  ServerError,
  StepResult,
  VersionMismatch,
} from "./client.js";

export {
  CurveRow,
  EpisodeResult,
  RandomBaselineOptions,
  RandomBaselineResult,
  Rng,
  TrainOptions,
  TrainResult,
  exampleTrain,
  mulberry32,
  randomAction,
  runEpisode,
  runRandomBaseline,
  writeCurveCsv,
} from "./agents.js";
