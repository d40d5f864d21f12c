import pytest
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

from logit_shim import ModelRuntime, ServerConfig, create_app

TRAINING_LINES = [
    "Review: they 're easy to use",
    "Review: norton support is completely pathetic",
    "Review: overall , i am very pleased with it",
    "Sentiment: negative unhealthy unjust",
    "Sentiment: positive good favorable",
    "Sentiment: negative",
    "Sentiment: positive",
    "the quick brown fox jumps over the lazy dog",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A seeded GPT-2-architecture model plus byte-level BPE tokenizer on disk.

    Built locally so the tests need no model hub access; loading goes through
    the standard auto classes exactly as it would for a published checkpoint.
    """
    target = tmp_path_factory.mktemp("tiny-model")
    tokenizer = Tokenizer(models.BPE(unk_token=None))
    tokenizer.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tokenizer.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=384,
        special_tokens=["<|endoftext|>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    tokenizer.train_from_iterator(TRAINING_LINES, trainer)
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        bos_token="<|endoftext|>",
        eos_token="<|endoftext|>",
        pad_token="<|endoftext|>",
    )
    fast.save_pretrained(target)

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=tokenizer.get_vocab_size(),
        n_positions=512,
        n_embd=32,
        n_layer=2,
        n_head=2,
    )
    GPT2LMHeadModel(config).save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def server_config(tiny_model_dir):
    return ServerConfig(model=str(tiny_model_dir), max_prompt_chars=300)


@pytest.fixture(scope="session")
def runtime(server_config):
    return ModelRuntime(server_config)


@pytest.fixture(scope="session")
def app(server_config, runtime):
    return create_app(server_config, runtime=runtime)
