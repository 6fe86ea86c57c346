import pytest

from byolspeak.corpus import SyntheticSpeakerSpec, build_corpus
from byolspeak.features import MelConfig, NormStats
from byolspeak.nn import default_encoder, default_predictor, default_projector
from byolspeak.trainer import TrainConfig, Trainer


@pytest.fixture(scope="session")
def small_checkpoint():
    """Untrained but realistic checkpoint: default features, narrow encoder."""
    cfg = TrainConfig(seed=99, embedding_dim=16, segment_frames=100)
    trainer = Trainer(
        cfg,
        mel_cfg=MelConfig(),
        stats=NormStats(-8.0, 5.0),
        encoder_spec=default_encoder(16, widths=(2, 2, 2)),
        projector_spec=default_projector(hidden=8, out_dim=4),
        predictor_spec=default_predictor(hidden=8, out_dim=4),
    )
    return trainer.checkpoint()


@pytest.fixture(scope="session")
def two_speaker_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    specs = [
        SyntheticSpeakerSpec(f0_range=(110, 115), formant_centers=(500, 1500), seed=1),
        SyntheticSpeakerSpec(f0_range=(220, 230), formant_centers=(800, 2200), seed=2),
    ]
    return build_corpus(specs, utterances_per_speaker=3, out_dir=root, duration_s=1.5)
