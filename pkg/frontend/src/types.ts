// Shared view-model types, re-exported so render code does not reach into the
// API module (and vice versa).

export type {
  ArmReport,
  CrossExamRecord,
  CrossExamTask,
  ImageRefView,
  Report,
  TaskView,
  Verdict,
} from "./api.js";

export interface Progress {
  done: number;
  total: number;
}
