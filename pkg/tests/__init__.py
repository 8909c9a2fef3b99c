# elasticdb/tests/__init__.py
