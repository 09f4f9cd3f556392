"""
Unit tests for image and text array I/O.
"""
import os
import shutil
import tempfile
import unittest

import numpy as np

from core import ParseError
from image_io import load_array, save_image


class TestImageIO(unittest.TestCase):
    """Test cases for load_array and save_image."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test files."""
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def path(self, name):
        return os.path.join(self.temp_dir, name)

    def test_sixteen_bit_png(self):
        """Test that a 16-bit PNG spans the full range."""
        ramp = np.outer(np.linspace(0.0, 1.0, 16), np.ones(8))
        loaded = load_array(save_image(self.path('ramp.png'), ramp))
        self.assertEqual(loaded.shape, (16, 8))
        self.assertEqual(loaded.min(), 0.0)
        self.assertEqual(loaded.max(), 65535.0)

    def test_eight_bit_png(self):
        """Test 8-bit output."""
        loaded = load_array(save_image(self.path('step.png'), np.eye(4), bits=8))
        np.testing.assert_array_equal(loaded, 255.0 * np.eye(4))

    def test_flat_image(self):
        """Test that a constant array is written as zeros."""
        loaded = load_array(save_image(self.path('flat.png'), np.full((3, 3), 7.0)))
        np.testing.assert_array_equal(loaded, np.zeros((3, 3)))

    def test_bad_bit_depth(self):
        """Test that unsupported bit depths are refused."""
        with self.assertRaises(ValueError):
            save_image(self.path('x.png'), np.eye(2), bits=12)

    def test_text_array_with_comments(self):
        """Test whitespace columns with # comments."""
        with open(self.path('mask.dat'), 'w', encoding='utf-8') as f:
            f.write("# intensity\n1 2 3\n4 5 6\n")
        np.testing.assert_array_equal(load_array(self.path('mask.dat')),
                                      [[1, 2, 3], [4, 5, 6]])

    def test_csv_array(self):
        """Test comma-separated input."""
        with open(self.path('mask.csv'), 'w', encoding='utf-8') as f:
            f.write("1,2\n3,4\n")
        np.testing.assert_array_equal(load_array(self.path('mask.csv')), [[1, 2], [3, 4]])

    def test_missing_file(self):
        """Test that a missing file is a parse error."""
        with self.assertRaises(ParseError):
            load_array(self.path('nothing.png'))

    def test_malformed_text(self):
        """Test that non-numeric text is a parse error."""
        with open(self.path('bad.txt'), 'w', encoding='utf-8') as f:
            f.write("1 two 3\n")
        with self.assertRaises(ParseError):
            load_array(self.path('bad.txt'))

    def test_unreadable_image(self):
        """Test that a corrupt image is a parse error."""
        with open(self.path('broken.png'), 'wb') as f:
            f.write(b'not a png')
        with self.assertRaises(ParseError):
            load_array(self.path('broken.png'))


if __name__ == '__main__':
    unittest.main()
