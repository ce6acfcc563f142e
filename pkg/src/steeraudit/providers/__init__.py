"""Message producers and perception readers."""
from .msgcap import CONDITIONS, SIGNAL_WEIGHTS, Msgcap, Recommendation, msgcap_filename, parse_producer_payload
from .perception import PERCEPTION_SCHEMA, ParseFailure, Reader, ReaderError, extract_perception, parse_perception
from .producer import OBJECTIVES, Producer, ProducerError, produce_msgcap
from .remote import EndpointConfig, RemoteCallError, RemoteProducer, RemoteReader, remote_chat_call
from .synthetic import ProducerConfig, ReaderConfig, SyntheticProducer, SyntheticReader
from .template import factual_template

__all__ = [
    "CONDITIONS", "SIGNAL_WEIGHTS", "Msgcap", "Recommendation", "msgcap_filename", "parse_producer_payload",
    "PERCEPTION_SCHEMA", "ParseFailure", "Reader", "ReaderError", "extract_perception", "parse_perception",
    "OBJECTIVES", "Producer", "ProducerError", "produce_msgcap",
    "EndpointConfig", "RemoteCallError", "RemoteProducer", "RemoteReader", "remote_chat_call",
    "ProducerConfig", "ReaderConfig", "SyntheticProducer", "SyntheticReader",
    "factual_template",
]
