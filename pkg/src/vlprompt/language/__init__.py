"""Language prompting features: dialogues, LLM/encoder backends and the feature DB."""
from .prompts import DialogueMessage, build_rj_prompt, build_rp_prompt, render_dialogue
from .completion import absent_sentence, complete_rp_description, proposed_relations
from .backends import (
    BackendError,
    EndpointConfig,
    HTTPStatusError,
    MockChat,
    MockEncoder,
    RateLimitError,
    RemoteChat,
    RemoteEncoder,
    ResponseFormatError,
    TransportError,
    encode_description,
    llm_chat,
)
from .featuredb import (
    DescriptionRecord,
    FeatureDB,
    FeatureDBError,
    IncompleteBuildError,
    MetadataMismatchError,
    MissingKeyError,
    build_feature_db,
    expected_keys,
    retrieve,
    rj_key,
    rp_key,
)
