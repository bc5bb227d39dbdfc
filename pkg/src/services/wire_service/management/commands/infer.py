"""
Management command to send one image through the deployment
"""
import numpy as np
import torch
from django.core.management.base import BaseCommand
from PIL import Image, UnidentifiedImageError

from src.services.experiments_service.datasets import read_idx
from src.services.wire_service.links import SocketLink
from src.services.wire_service.services import SplitClient
from src.shared.decorators import command_errors
from src.shared.exceptions import IoFailure
from src.shared.validators import parse_shape, validate_endpoint


def load_image(path, shape=None):
    """IDX (first image) or any Pillow-readable file -> float32 [C, H, W] in [0, 1]"""
    try:
        with open(path, 'rb') as f:
            head = f.read(3)
    except OSError as e:
        raise IoFailure(f"Cannot read {path}: {e}")
    if head[:2] == b'\x00\x00':
        array = read_idx(path)[0]
        array = array[None] if array.ndim == 2 else array
        return torch.from_numpy(array.astype(np.float32) / 255.0)

    try:
        image = Image.open(path)
    except (OSError, UnidentifiedImageError) as e:
        raise IoFailure(f"Cannot read image {path}: {e}")
    channels = shape[0] if shape else 3
    image = image.convert('L' if channels == 1 else 'RGB')
    if shape and image.size != (shape[2], shape[1]):
        image = image.resize((shape[2], shape[1]), Image.BILINEAR)
    array = np.asarray(image, dtype=np.float32) / 255.0
    array = array[None] if array.ndim == 2 else array.transpose(2, 0, 1)
    return torch.from_numpy(np.ascontiguousarray(array))


class Command(BaseCommand):
    help = 'Query the edge gateway with one image and print what the client observes'

    def add_arguments(self, parser):
        parser.add_argument('--endpoint', required=True, help='Edge address')
        parser.add_argument('--input', required=True, help='IDX file or image')
        parser.add_argument('--shape', help='Resize to C,H,W before sending')
        parser.add_argument('--session', type=int, default=1)

    @command_errors
    def handle(self, *args, **options):
        validate_endpoint(options['endpoint'])
        shape = parse_shape(options['shape']) if options['shape'] else None
        image = load_image(options['input'], shape)
        client = SplitClient(SocketLink(options['endpoint']), tuple(image.shape), session_id=options['session'])
        try:
            mode = client.connect()
            observation = client.infer(image)
        finally:
            client.close()

        if mode == 'score':
            probs = ', '.join(f"{p:.4f}" for p in observation.probs)
            self.stdout.write(f"probabilities: [{probs}]")
            self.stdout.write(self.style.SUCCESS(f"predicted class {int(np.argmax(observation.probs))}"))
        elif mode == 'hard':
            self.stdout.write(self.style.SUCCESS(f"predicted class {observation.label}"))
        else:
            self.stdout.write(self.style.WARNING('acknowledged (no output returned in none mode)'))
        self.stdout.write(f"queries issued: {client.query_count}")
