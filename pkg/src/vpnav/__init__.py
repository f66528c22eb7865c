"""Synthetic benchmark stack for visual-prompt navigation.

Procedurally generated multi-floor worlds, top-view prompt maps built by
the overlay/crop/resize pipeline, prompt parsing and registration, an
incremental topological agent with attention-based scoring machinery, an
imitation-trained policy, navigation metrics, and an HTTP service for
human-in-the-loop prompt drawing.
"""

from .world import (Scene, SceneConfig, NavGraph, NavNode, ViewObservation,
                    generate_scene, shortest_path, observe, observe_step,
                    dump_scene, load_scene)
from .episodes import (Episode, EpisodeConfig, PromptBundle, PromptOptions,
                       sample_episode, attach_prompt, build_split, floor_runs)
from .promptmap import (PromptRaster, PromptStyle, NoiseKind, NoiseSpec,
                        render_topview, overlay_trajectory, crop_pipeline,
                        finalize_fullmap, rotate_prompt, apply_noise)
from .promptparse import (ParsedPrompt, Registration, RegisteredPrompt,
                          extract_polyline, register,
                          NoInkError, BrokenChainError, AmbiguousRegistrationError)
from .topo import TopoGraph, TopoNode, update_graph, embed_views, embed_node, embed_graph
from .policy import (PolicyParams, AttentionWeights, PromptTokens, ScoreVector, Action,
                     encode_prompt_map, oafc_concat, cross_attention_forward,
                     gasa_forward, global_scores, neural_global_scores,
                     local_to_global, fuse, act, geometric_score, pseudo_label,
                     save_params, load_params, STOP_ID)
from .agents import (GuideOptions, GuideSet, OracleAgent, GeometricAgent,
                     LearnedAgent, make_agent, run_episode, evaluate_split)
from .training import (TrainingSample, TrainSchedule, TrainResult,
                       loss_and_grad, train, collect_bc_samples, collect_dagger_samples)
from .metrics import (TrajectoryRecord, MetricsRecord, path_metrics, aggregate,
                      cross_success, floorwise_success)

__version__ = "0.1.0"
