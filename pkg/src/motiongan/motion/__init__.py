from .io import (
    DimensionMismatchError,
    MalformedHeaderError,
    MotionFormatError,
    TruncatedPayloadError,
    export_json,
    import_json,
    load,
    save,
)
from .sampling import SquareRootSampler, permute_batch, random_person_permutations, square_root_class_sampler, square_root_probabilities
from .sequence import (
    LabeledDataset,
    MotionSequence,
    Representation,
    bone_lengths,
    dataset_from_flat,
    fit_length,
    flatten,
    from_limb_vectors,
    limb_topology,
    permute_persons,
    remap_joints,
    resolve_topology,
    to_limb_vectors,
    unflatten,
)
from .synth import INTERACTION_CLASSES, SINGLE_PERSON_CLASSES, SynthSpec, synth_dataset
from .topology import SkeletonTopology, get_topology, ntu_like_topology, star_topology, topology_for_joints
